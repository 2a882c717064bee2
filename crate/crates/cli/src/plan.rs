//! Sweeps over environments, algorithms, group sizes and seeds.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use gpg_core::trainer::{Algorithm, TrainConfig};
use gpg_core::env::ObservationSpace;
use gpg_core::{BinningConfig, EnvId};

use crate::error::{CliError, CliResult};
use crate::run::{train_run, RunOptions};

pub const SUMMARY_HEADER: [&str; 8] = [
    "env",
    "algorithm",
    "num_envs",
    "runs",
    "failed",
    "mean_return",
    "std_return",
    "eval_seeds",
];

#[derive(Debug, Clone)]
pub struct ExperimentPlan {
    pub envs: Vec<EnvId>,
    pub algorithms: Vec<Algorithm>,
    pub num_envs: Vec<usize>,
    pub seeds: Vec<u64>,
    pub eval_seeds: usize,
    pub iterations: usize,
    pub out: PathBuf,
    /// Every other hyperparameter.
    pub base: TrainConfig,
}

impl ExperimentPlan {
    pub fn validate(&self) -> CliResult<()> {
        for (name, empty) in [
            ("environment", self.envs.is_empty()),
            ("algorithm", self.algorithms.is_empty()),
            ("num-envs", self.num_envs.is_empty()),
            ("seed", self.seeds.is_empty()),
        ] {
            if empty {
                return Err(CliError::usage(format!("the {name} list is empty")));
            }
        }
        if self.seeds.iter().collect::<HashSet<_>>().len() != self.seeds.len() {
            return Err(CliError::usage("training seeds must be distinct"));
        }
        if self.eval_seeds == 0 {
            return Err(CliError::usage("eval-seeds must be positive"));
        }
        for env in &self.envs {
            for alg in &self.algorithms {
                check_observations(env, alg)?;
            }
        }
        for &n in &self.num_envs {
            self.config(&self.algorithms[0], n, self.seeds[0]).validate()?;
        }
        Ok(())
    }

    pub fn config(&self, algorithm: &Algorithm, num_envs: usize, seed: u64) -> TrainConfig {
        TrainConfig {
            algorithm: algorithm.clone(),
            num_envs,
            seed,
            iterations: self.iterations,
            ..self.base.clone()
        }
    }
}

/// Spatial binnings need real-valued observations and state binning discrete ones.
pub fn check_observations(env: &EnvId, algorithm: &Algorithm) -> CliResult<()> {
    let Algorithm::Gpg(b) = algorithm else {
        return Ok(());
    };
    let real = matches!(env.spec().observation, ObservationSpace::Real { .. });
    if b.needs_real_observations() && !real {
        return Err(CliError::usage(format!(
            "binning {b} needs real-valued observations, {env} has discrete ones"
        )));
    }
    if *b == BinningConfig::State && real {
        return Err(CliError::usage(format!(
            "binning state needs discrete observations, {env} has real ones"
        )));
    }
    Ok(())
}

/// One summary row: final evaluation returns aggregated over training seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub env: String,
    pub algorithm: String,
    pub num_envs: usize,
    pub runs: usize,
    pub failed: usize,
    pub mean_return: f64,
    pub std_return: f64,
    pub eval_seeds: usize,
}

impl SummaryRow {
    fn record(&self) -> [String; 8] {
        [
            self.env.clone(),
            self.algorithm.clone(),
            self.num_envs.to_string(),
            self.runs.to_string(),
            self.failed.to_string(),
            self.mean_return.to_string(),
            self.std_return.to_string(),
            self.eval_seeds.to_string(),
        ]
    }
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    (mean, (xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n).sqrt())
}

/// Runs every (env, algorithm, num_envs, seed) combination. A failed run is reported
/// on stderr, left with its diagnostics, and counted in the summary; the sweep goes on.
pub fn run_plan(plan: &ExperimentPlan, opts: &RunOptions) -> CliResult<Vec<SummaryRow>> {
    plan.validate()?;
    let mut rows = Vec::new();
    for env in &plan.envs {
        for alg in &plan.algorithms {
            for &n in &plan.num_envs {
                let mut finals = Vec::new();
                let mut failed = 0;
                for &seed in &plan.seeds {
                    match train_run(&plan.out, env, &plan.config(alg, n, seed), opts) {
                        Ok(outcome) => finals.push(outcome.eval.mean),
                        Err(e) => {
                            eprintln!("run {env} {alg} n={n} seed={seed} failed: {e}");
                            failed += 1;
                        }
                    }
                }
                let (mean_return, std_return) = mean_std(&finals);
                rows.push(SummaryRow {
                    env: env.to_string(),
                    algorithm: alg.to_string(),
                    num_envs: n,
                    runs: plan.seeds.len(),
                    failed,
                    mean_return,
                    std_return,
                    eval_seeds: plan.eval_seeds,
                });
            }
        }
    }
    Ok(rows)
}

pub fn write_summary(path: &Path, rows: &[SummaryRow]) -> CliResult<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(SUMMARY_HEADER)?;
    for r in rows {
        w.write_record(r.record())?;
    }
    w.flush()?;
    Ok(())
}
