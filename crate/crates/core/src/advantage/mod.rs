//! Advantage estimators.
//!
//! The group baseline works in two passes over a [`RolloutGroup`]: [`build_bin_table`]
//! inserts each segment's first-visit return into the bin of its state, then
//! [`gpg_advantages`] subtracts the bin mean from every step's return. Outcome
//! normalisation, truncated GAE and per-batch normalisation live alongside.

mod binning;
mod estimators;

use std::collections::HashMap;

pub use binning::{bin_key, BinKey, BinningConfig};
pub use estimators::{gae_advantages, grpo_outcome_advantages, normalize_advantages, population_std};

use crate::mdp::{ReturnsTable, RolloutGroup};
use crate::{Error, Result};

/// Denominator guard for standard-deviation normalisation.
pub const EPS_NUM: f64 = 1e-8;

/// Running sum and count of first-visit returns in one bin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinStats {
    pub sum: f64,
    pub count: usize,
}

impl BinStats {
    pub fn mean(&self) -> f64 {
        self.sum / self.count as f64
    }
}

/// First-visit return statistics per bin, estimated from one group.
#[derive(Debug, Clone, PartialEq)]
pub struct BinTable {
    config: BinningConfig,
    bins: HashMap<BinKey, BinStats>,
}

impl BinTable {
    pub fn config(&self) -> &BinningConfig {
        &self.config
    }

    pub fn get(&self, key: &BinKey) -> Option<&BinStats> {
        self.bins.get(key)
    }

    pub fn len(&self) -> usize {
        self.bins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bins.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&BinKey, &BinStats)> {
        self.bins.iter()
    }

    /// Total number of inserted returns.
    pub fn insertions(&self) -> usize {
        self.bins.values().map(|b| b.count).sum()
    }
}

/// Which advantage estimator produced a set.
#[derive(Debug, Clone, PartialEq)]
pub enum EstimatorTag {
    Gpg(BinningConfig),
    GrpoOutcome,
    Gae { gamma: f64, lambda: f64 },
}

/// Per-segment, per-step advantages.
#[derive(Debug, Clone, PartialEq)]
pub struct AdvantageSet {
    pub values: Vec<Vec<f64>>,
    pub estimator: EstimatorTag,
}

impl AdvantageSet {
    pub fn row(&self, segment: usize) -> &[f64] {
        &self.values[segment]
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.values.iter().flatten().copied().collect()
    }
}

fn check_alignment(group: &RolloutGroup, returns: &ReturnsTable) -> Result<()> {
    if group.segments.len() != returns.rows.len()
        || group
            .segments
            .iter()
            .zip(&returns.rows)
            .any(|(s, r)| s.len() != r.len())
    {
        return Err(Error::invalid("returns table does not match the group"));
    }
    Ok(())
}

/// Bin keys of every step of every segment.
fn group_keys(group: &RolloutGroup, config: &BinningConfig) -> Result<Vec<Vec<BinKey>>> {
    group
        .segments
        .iter()
        .map(|seg| {
            seg.steps
                .iter()
                .map(|s| bin_key(&s.observation, s.episode_timestep, config))
                .collect()
        })
        .collect()
}

/// Indices of the steps whose return gets inserted: the first step of the segment that
/// lands in each bin.
fn first_visits(keys: &[BinKey]) -> Vec<usize> {
    let mut seen = std::collections::HashSet::new();
    keys.iter()
        .enumerate()
        .filter(|(_, k)| seen.insert(*k))
        .map(|(t, _)| t)
        .collect()
}

/// Inserts each segment's first-visit return into its bin.
pub fn build_bin_table(group: &RolloutGroup, returns: &ReturnsTable, config: &BinningConfig) -> Result<BinTable> {
    check_alignment(group, returns)?;
    let mut bins: HashMap<BinKey, BinStats> = HashMap::new();
    for (keys, rets) in group_keys(group, config)?.iter().zip(&returns.rows) {
        for t in first_visits(keys) {
            let entry = bins.entry(keys[t].clone()).or_insert(BinStats { sum: 0.0, count: 0 });
            entry.sum += rets[t];
            entry.count += 1;
        }
    }
    Ok(BinTable {
        config: config.clone(),
        bins,
    })
}

/// `A_t = R_t - mean(bin of s_t)` for every step, first visit or not.
///
/// With `leave_one_out`, bins holding at least two returns exclude the segment's own
/// first-visit return from the mean; singleton bins keep the inclusive mean.
pub fn gpg_advantages(
    group: &RolloutGroup,
    returns: &ReturnsTable,
    table: &BinTable,
    leave_one_out: bool,
) -> Result<AdvantageSet> {
    check_alignment(group, returns)?;
    let keys = group_keys(group, &table.config)?;
    let mut values = Vec::with_capacity(keys.len());
    for (seg_keys, rets) in keys.iter().zip(&returns.rows) {
        let own: HashMap<&BinKey, f64> = if leave_one_out {
            first_visits(seg_keys).into_iter().map(|t| (&seg_keys[t], rets[t])).collect()
        } else {
            HashMap::new()
        };
        let row = seg_keys
            .iter()
            .zip(rets)
            .map(|(key, r)| {
                let stats = table.bins.get(key).ok_or_else(|| {
                    Error::Internal(format!("bin {key:?} missing from a table built from this group"))
                })?;
                let baseline = match own.get(key) {
                    Some(mine) if stats.count >= 2 => (stats.sum - mine) / (stats.count - 1) as f64,
                    _ => stats.mean(),
                };
                Ok(r - baseline)
            })
            .collect::<Result<Vec<_>>>()?;
        values.push(row);
    }
    Ok(AdvantageSet {
        values,
        estimator: EstimatorTag::Gpg(table.config.clone()),
    })
}
