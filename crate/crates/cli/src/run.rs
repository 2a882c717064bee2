//! One training run and its output directory.
//!
//! Layout: `<root>/<env>/<algo>/<num_envs>/<seed>/` holding `metrics.csv` (one row per
//! iteration), `checkpoint.bin`, `config.resolved` and `eval.csv` (final evaluation).
//! A run that aborts on a numerical failure leaves `diagnostics.txt` and the checkpoint
//! of the last finished iteration instead of `eval.csv`.

use std::fs;
use std::path::{Path, PathBuf};

use gpg_core::policy::Checkpoint;
use gpg_core::trainer::{evaluate, EvalSummary, IterationMetrics, TrainConfig, Trainer};
use gpg_core::EnvId;

use crate::error::{CliError, CliResult, EXIT_NUMERICAL};

pub const EVAL_HEADER: [&str; 6] = ["env", "algorithm", "num_envs", "seed", "eval_mean", "eval_std"];

/// Evaluation seeds derive from the training seed but use their own streams.
pub const EVAL_SEED_OFFSET: u64 = 1_000_003;

pub fn run_dir(root: &Path, env: &EnvId, config: &TrainConfig) -> PathBuf {
    root.join(env.slug())
        .join(config.algorithm.slug())
        .join(config.num_envs.to_string())
        .join(config.seed.to_string())
}

pub struct RunOptions {
    pub eval_seeds: usize,
    /// Write 0 in the wall_ms column so reruns produce identical bytes.
    pub zero_wall_clock: bool,
    pub resume: Option<PathBuf>,
    pub quiet: bool,
}

pub struct RunOutcome {
    pub dir: PathBuf,
    pub eval: EvalSummary,
    pub iterations: usize,
}

pub fn write_metrics(path: &Path, rows: &[IterationMetrics], zero_wall_clock: bool) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(IterationMetrics::CSV_HEADER)?;
    for m in rows {
        let mut rec = m.csv_record();
        if zero_wall_clock {
            rec[10] = "0".into();
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Trains one configuration, writes its directory and evaluates the final policy.
pub fn train_run(root: &Path, env: &EnvId, config: &TrainConfig, opts: &RunOptions) -> CliResult<RunOutcome> {
    let dir = run_dir(root, env, config);
    fs::create_dir_all(&dir).map_err(|e| CliError::io(format!("{}: {e}", dir.display())))?;
    fs::write(dir.join("config.resolved"), format!("# env = {env}\n{}", config.to_text()))?;

    let mut trainer = match &opts.resume {
        Some(path) => Trainer::resume(env.clone(), config.clone(), Checkpoint::load(path)?)?,
        None => Trainer::new(env.clone(), config.clone())?,
    };
    let mut rows = Vec::new();
    let result = loop {
        if trainer.iteration() >= config.iterations {
            break Ok(());
        }
        match trainer.train_iteration() {
            Ok(m) => {
                if !opts.quiet {
                    eprintln!(
                        "[{} {} n={} seed={}] iteration {} return {:.2}",
                        env,
                        config.algorithm,
                        config.num_envs,
                        config.seed,
                        m.iteration,
                        m.mean_return
                    );
                }
                rows.push(m);
            }
            Err(e) => break Err(e),
        }
    };
    write_metrics(&dir.join("metrics.csv"), &rows, opts.zero_wall_clock)?;
    trainer.checkpoint().save(&dir.join("checkpoint.bin"))?;
    if let Err(e) = result {
        let diag = dir.join("diagnostics.txt");
        fs::write(&diag, format!("{e}\n"))?;
        let code = CliError::from(e).code;
        return Err(CliError {
            code,
            message: if code == EXIT_NUMERICAL {
                format!("training aborted; diagnostics in {}", diag.display())
            } else {
                format!("training failed; see {}", diag.display())
            },
        });
    }

    let eval = evaluate(trainer.policy(), env, opts.eval_seeds, config.seed + EVAL_SEED_OFFSET)?;
    let mut w = csv::Writer::from_path(dir.join("eval.csv"))?;
    w.write_record(EVAL_HEADER)?;
    w.write_record([
        env.to_string(),
        config.algorithm.to_string(),
        config.num_envs.to_string(),
        config.seed.to_string(),
        eval.mean.to_string(),
        eval.std.to_string(),
    ])?;
    w.flush()?;
    Ok(RunOutcome {
        dir,
        eval,
        iterations: rows.len(),
    })
}
