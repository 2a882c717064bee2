use std::fmt;
use std::str::FromStr;

use crate::mdp::Observation;
use crate::{Error, Result};

/// Binning function `f(s, t)`.
#[derive(Debug, Clone, PartialEq)]
pub enum BinningConfig {
    /// One bin for everything.
    Universal,
    /// One bin per within-episode timestep.
    Time,
    /// Lattice cell of side `eps`.
    Spatial { eps: f64 },
    /// Lattice cell of side `eps` and timestep together.
    SpatialTime { eps: f64 },
    /// One bin per discrete state.
    State,
}

/// A bin identifier. Equality is exact: spatial keys are integer lattice points.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum BinKey {
    Universal,
    Time(usize),
    Spatial(Vec<i64>),
    SpatialTime(Vec<i64>, usize),
    DiscreteState(usize),
}

impl BinningConfig {
    pub fn needs_real_observations(&self) -> bool {
        matches!(self, BinningConfig::Spatial { .. } | BinningConfig::SpatialTime { .. })
    }
}

impl FromStr for BinningConfig {
    type Err = Error;

    /// Grammar: `universal | time | spatial:<eps> | spatialtime:<eps> | state`.
    fn from_str(s: &str) -> Result<Self> {
        let eps = |v: &str| -> Result<f64> {
            let eps: f64 = v
                .parse()
                .map_err(|_| Error::config(format!("bad bin size {v:?} in binning {s:?}")))?;
            if eps.is_finite() && eps > 0.0 {
                Ok(eps)
            } else {
                Err(Error::config(format!("bin size must be positive, got {eps}")))
            }
        };
        match s {
            "universal" => Ok(BinningConfig::Universal),
            "time" => Ok(BinningConfig::Time),
            "state" => Ok(BinningConfig::State),
            _ => {
                if let Some(v) = s.strip_prefix("spatialtime:") {
                    Ok(BinningConfig::SpatialTime { eps: eps(v)? })
                } else if let Some(v) = s.strip_prefix("spatial:") {
                    Ok(BinningConfig::Spatial { eps: eps(v)? })
                } else {
                    Err(Error::config(format!(
                        "unknown binning {s:?} (expected universal, time, spatial:<eps>, spatialtime:<eps> or state)"
                    )))
                }
            }
        }
    }
}

impl fmt::Display for BinningConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BinningConfig::Universal => f.write_str("universal"),
            BinningConfig::Time => f.write_str("time"),
            BinningConfig::Spatial { eps } => write!(f, "spatial:{eps}"),
            BinningConfig::SpatialTime { eps } => write!(f, "spatialtime:{eps}"),
            BinningConfig::State => f.write_str("state"),
        }
    }
}

fn lattice(x: &[f64], eps: f64) -> Vec<i64> {
    // Ties round to even.
    x.iter().map(|v| (v / eps).round_ties_even() as i64).collect()
}

/// The bin of state `observation` at within-episode timestep `t`.
pub fn bin_key(observation: &Observation, t: usize, config: &BinningConfig) -> Result<BinKey> {
    match (config, observation) {
        (BinningConfig::Universal, _) => Ok(BinKey::Universal),
        (BinningConfig::Time, _) => Ok(BinKey::Time(t)),
        (BinningConfig::Spatial { eps }, Observation::Real(x)) => Ok(BinKey::Spatial(lattice(x, *eps))),
        (BinningConfig::SpatialTime { eps }, Observation::Real(x)) => {
            Ok(BinKey::SpatialTime(lattice(x, *eps), t))
        }
        (BinningConfig::State, Observation::Discrete(s)) => Ok(BinKey::DiscreteState(*s)),
        (config, obs) => Err(Error::config(format!(
            "binning {config} cannot be applied to observation {obs:?}"
        ))),
    }
}
