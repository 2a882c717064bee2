//! `gpg-rl`: train, evaluate, sweep and ablate group policy gradient runs, and check
//! sampled gradient estimators against exact ones.

mod error;
mod oracle_check;
mod plan;
mod run;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gpg_core::policy::Checkpoint;
use gpg_core::trainer::{evaluate, Algorithm, TrainConfig};
use gpg_core::EnvId;

use error::{CliError, CliResult, EXIT_FAILED_CHECK};
use plan::{run_plan, write_summary, ExperimentPlan};
use run::{train_run, RunOptions};

#[derive(Parser)]
#[command(name = "gpg-rl", version, about = "Critic-free group policy gradient training")]
struct Cli {
    /// Worker threads for rollout collection and oracle repetitions (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Suppress per-iteration progress on stderr.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one configuration for each seed.
    Train(TrainArgs),
    /// Evaluate a checkpoint.
    Eval(EvalArgs),
    /// Train every (env, algorithm, num-envs, seed) combination and summarise.
    Sweep(SweepArgs),
    /// Compare binning functions of the group baseline.
    AblateBinning(AblateArgs),
    /// Compare sampled gradient estimators with enumerated gradients on tabular MDPs.
    OracleCheck(OracleArgs),
}

#[derive(Args)]
struct Hyper {
    /// key = value config file; see `TrainConfig` for the keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Extra KEY=VALUE overrides, applied after the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    iterations: Option<usize>,
    /// Final evaluation episodes per run.
    #[arg(long, default_value_t = 5)]
    eval_seeds: usize,
    /// Output root (default: $GPG_RL_OUT, else ./out).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write 0 in the wall_ms column so reruns give identical files.
    #[arg(long)]
    zero_wall_clock: bool,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, default_value = "cartpole")]
    env: String,
    /// gpg, ppo or grpo.
    #[arg(long)]
    algo: Option<String>,
    /// universal, time, state, spatial:EPS or spatialtime:EPS.
    #[arg(long)]
    binning: Option<String>,
    #[arg(long)]
    num_envs: Option<usize>,
    /// Comma-separated training seeds.
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
    /// Continue from a checkpoint.
    #[arg(long)]
    resume: Option<PathBuf>,
    #[command(flatten)]
    hyper: Hyper,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Defaults to the environment recorded in the checkpoint.
    #[arg(long)]
    env: Option<String>,
    #[arg(long = "n-seeds", alias = "eval-seeds", default_value_t = 5)]
    n_seeds: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Append the result row to this CSV file.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long, value_delimiter = ',', default_value = "cartpole")]
    env: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "gpg")]
    algo: Vec<String>,
    /// Binning used by the gpg entries.
    #[arg(long, default_value = "time")]
    binning: String,
    #[arg(long, value_delimiter = ',', default_value = "1,4,16,32")]
    num_envs: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4")]
    seeds: Vec<u64>,
    #[command(flatten)]
    hyper: Hyper,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long, default_value = "pointmass")]
    env: String,
    #[arg(long, value_delimiter = ',', default_value = "universal,time")]
    binning: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "16")]
    num_envs: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4")]
    seeds: Vec<u64>,
    #[command(flatten)]
    hyper: Hyper,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long, value_delimiter = ',', default_value = "100,1000,10000")]
    n_list: Vec<usize>,
    #[arg(long, default_value_t = 20)]
    reps: usize,
    /// Largest acceptable median relative error at the largest N.
    #[arg(long, default_value_t = 0.05)]
    tolerance: f64,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn output_root(flag: &Option<PathBuf>) -> PathBuf {
    flag.clone()
        .or_else(|| std::env::var_os("GPG_RL_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn parse_algorithm(algo: &str, binning: Option<&str>) -> CliResult<Algorithm> {
    let mut cfg = TrainConfig::default();
    cfg.set("algorithm", algo)?;
    if let Some(b) = binning {
        if algo == "gpg" {
            cfg.set("binning", b)?;
        }
    }
    Ok(cfg.algorithm)
}

/// Defaults, then the config file, then `--set` overrides, then dedicated flags.
fn base_config(h: &Hyper) -> CliResult<TrainConfig> {
    let mut cfg = TrainConfig::default();
    if let Some(path) = &h.config {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
        cfg.apply_text(&text)?;
    }
    for kv in &h.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| CliError::usage(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        cfg.set(k, v)?;
    }
    if let Some(n) = h.iterations {
        cfg.iterations = n;
    }
    Ok(cfg)
}

fn run_options(h: &Hyper, resume: Option<PathBuf>, quiet: bool) -> RunOptions {
    RunOptions {
        eval_seeds: h.eval_seeds,
        zero_wall_clock: h.zero_wall_clock,
        resume,
        quiet,
    }
}

fn cmd_train(args: TrainArgs, quiet: bool) -> CliResult<()> {
    let env = EnvId::parse(&args.env)?;
    let mut cfg = base_config(&args.hyper)?;
    if let Some(a) = &args.algo {
        cfg.set("algorithm", a)?;
    }
    if let Some(b) = &args.binning {
        cfg.set("binning", b)?;
    }
    if let Some(n) = args.num_envs {
        cfg.num_envs = n;
    }
    cfg.validate()?;
    plan::check_observations(&env, &cfg.algorithm)?;
    if args.hyper.eval_seeds == 0 {
        return Err(CliError::usage("--eval-seeds must be positive"));
    }
    let seeds = if args.seeds.is_empty() { vec![cfg.seed] } else { args.seeds.clone() };
    if args.resume.is_some() && seeds.len() > 1 {
        return Err(CliError::usage("--resume takes a single seed"));
    }
    let root = output_root(&args.hyper.out);
    let opts = run_options(&args.hyper, args.resume.clone(), quiet);
    for seed in seeds {
        let config = TrainConfig { seed, ..cfg.clone() };
        let outcome = train_run(&root, &env, &config, &opts)?;
        println!(
            "{} {} num_envs={} seed={}: {} iterations, eval {:.2} +- {:.2} ({})",
            env,
            config.algorithm,
            config.num_envs,
            seed,
            outcome.iterations,
            outcome.eval.mean,
            outcome.eval.std,
            outcome.dir.display()
        );
    }
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> CliResult<()> {
    let ckpt = Checkpoint::load(&args.checkpoint)?;
    let env = EnvId::parse(args.env.as_deref().unwrap_or(&ckpt.env_id))?;
    if args.n_seeds == 0 {
        return Err(CliError::usage("--n-seeds must be positive"));
    }
    let summary = evaluate(&ckpt.policy, &env, args.n_seeds, args.seed)?;
    println!("{env}: {:.4} +- {:.4} over {} episodes", summary.mean, summary.std, args.n_seeds);
    let record = [
        args.checkpoint.display().to_string(),
        env.to_string(),
        ckpt.iteration.to_string(),
        args.n_seeds.to_string(),
        summary.mean.to_string(),
        summary.std.to_string(),
    ];
    let header = ["checkpoint", "env", "iteration", "n_seeds", "eval_mean", "eval_std"];
    let mut w = csv::Writer::from_writer(std::io::stdout());
    w.write_record(header)?;
    w.write_record(&record)?;
    w.flush()?;
    if let Some(path) = &args.csv {
        let exists = path.exists();
        let file = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
        let mut w = csv::Writer::from_writer(file);
        if !exists {
            w.write_record(header)?;
        }
        w.write_record(&record)?;
        w.flush()?;
    }
    Ok(())
}

fn print_summary(path: &Path, rows: &[plan::SummaryRow]) {
    for r in rows {
        println!(
            "{} {} num_envs={}: {:.2} +- {:.2} ({} runs, {} failed)",
            r.env, r.algorithm, r.num_envs, r.mean_return, r.std_return, r.runs, r.failed
        );
    }
    println!("summary written to {}", path.display());
}

fn cmd_sweep(args: SweepArgs, quiet: bool) -> CliResult<()> {
    let base = base_config(&args.hyper)?;
    let plan = ExperimentPlan {
        envs: args.env.iter().map(|e| EnvId::parse(e)).collect::<Result<_, _>>()?,
        algorithms: args
            .algo
            .iter()
            .map(|a| parse_algorithm(a, Some(&args.binning)))
            .collect::<CliResult<_>>()?,
        num_envs: args.num_envs,
        seeds: args.seeds,
        eval_seeds: args.hyper.eval_seeds,
        iterations: base.iterations,
        out: output_root(&args.hyper.out),
        base,
    };
    let rows = run_plan(&plan, &run_options(&args.hyper, None, quiet))?;
    let path = plan.out.join("sweep_summary.csv");
    write_summary(&path, &rows)?;
    print_summary(&path, &rows);
    finish(&rows)
}

fn cmd_ablate(args: AblateArgs, quiet: bool) -> CliResult<()> {
    let base = base_config(&args.hyper)?;
    let env = EnvId::parse(&args.env)?;
    let plan = ExperimentPlan {
        algorithms: args
            .binning
            .iter()
            .map(|b| parse_algorithm("gpg", Some(b)))
            .collect::<CliResult<_>>()?,
        envs: vec![env.clone()],
        num_envs: args.num_envs,
        seeds: args.seeds,
        eval_seeds: args.hyper.eval_seeds,
        iterations: base.iterations,
        out: output_root(&args.hyper.out),
        base,
    };
    let rows = run_plan(&plan, &run_options(&args.hyper, None, quiet))?;
    let path = plan.out.join(env.slug()).join("ablate_binning.csv");
    write_summary(&path, &rows)?;
    print_summary(&path, &rows);
    finish(&rows)
}

/// A sweep whose runs all failed is an error; partial failures are only reported.
fn finish(rows: &[plan::SummaryRow]) -> CliResult<()> {
    if rows.iter().all(|r| r.failed == r.runs) {
        return Err(CliError {
            code: EXIT_FAILED_CHECK,
            message: "every run failed".into(),
        });
    }
    Ok(())
}

fn cmd_oracle(args: OracleArgs) -> CliResult<()> {
    if args.n_list.is_empty() || args.n_list.iter().any(|&n| n < 2) {
        return Err(CliError::usage("--n-list needs group sizes of at least 2"));
    }
    if args.reps == 0 {
        return Err(CliError::usage("--reps must be positive"));
    }
    let out = output_root(&args.out).join("oracle");
    let opts = oracle_check::OracleOptions {
        n_list: args.n_list,
        repetitions: args.reps,
        tolerance: args.tolerance,
        seed: args.seed,
    };
    let assertions = oracle_check::run(&out, &opts)?;
    print!("{}", oracle_check::summary_text(&assertions));
    println!("report written to {}", out.display());
    if assertions.iter().all(|a| a.passed) {
        Ok(())
    } else {
        Err(CliError {
            code: EXIT_FAILED_CHECK,
            message: "some oracle assertions failed".into(),
        })
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot start {n} threads: {e}");
            return ExitCode::from(error::EXIT_USAGE);
        }
    }
    let result = match cli.command {
        Command::Train(a) => cmd_train(a, cli.quiet),
        Command::Eval(a) => cmd_eval(a),
        Command::Sweep(a) => cmd_sweep(a, cli.quiet),
        Command::AblateBinning(a) => cmd_ablate(a, cli.quiet),
        Command::OracleCheck(a) => cmd_oracle(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
