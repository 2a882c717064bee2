//! The `oracle-check` battery: sampled gradient estimators against enumerated ones.

use std::fmt::Write as _;
use std::path::Path;

use gpg_core::oracle::{
    consistency_experiment, exact_objective_and_gradient, finite_difference_gradient, gpg_consistency_experiment,
    grpo_corollary_check, relative_l2_error, Estimator, ExactGradientReport, OracleProblem,
};
use gpg_core::BinningConfig;

use crate::error::CliResult;

pub struct OracleOptions {
    pub n_list: Vec<usize>,
    pub repetitions: usize,
    pub tolerance: f64,
    pub seed: u64,
}

pub struct Assertion {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

fn fmt_medians(r: &ExactGradientReport) -> String {
    r.median_errors()
        .iter()
        .map(|(n, e)| format!("N={n}: {e:.4}"))
        .collect::<Vec<_>>()
        .join(", ")
}

fn consistency_assertions(name: &str, r: &ExactGradientReport, opts: &OracleOptions, out: &mut Vec<Assertion>) {
    let top = *opts.n_list.iter().max().expect("nonempty N list");
    let last = r.median_error_at(top).unwrap_or(f64::NAN);
    out.push(Assertion {
        name: format!("{name}: median error non-increasing in N"),
        passed: r.is_monotone_non_increasing(),
        detail: fmt_medians(r),
    });
    out.push(Assertion {
        name: format!("{name}: median error at N={top} <= {}", opts.tolerance),
        passed: last <= opts.tolerance,
        detail: format!("{last:.4}"),
    });
    for w in &r.warnings {
        out.push(Assertion {
            name: format!("{name}: precondition"),
            passed: false,
            detail: w.clone(),
        });
    }
}

/// Runs the battery, writes `oracle.csv` (estimator, N, repetition, rel_error) and
/// `oracle_summary.txt` under `out`, and returns the assertions.
pub fn run(out: &Path, opts: &OracleOptions) -> CliResult<Vec<Assertion>> {
    let mut assertions = Vec::new();
    let mut reports = Vec::new();

    for p in [OracleProblem::bandit(), OracleProblem::chain3(), OracleProblem::chain4(), OracleProblem::grid()] {
        let (_, exact) = exact_objective_and_gradient(&p.mdp, &p.policy, p.horizon)?;
        let fd = finite_difference_gradient(&p.mdp, &p.policy, p.horizon, 1e-5)?;
        let err = relative_l2_error(&fd, &exact);
        assertions.push(Assertion {
            name: format!("{}: enumerated gradient matches finite differences", p.name),
            passed: err < 1e-8,
            detail: format!("{err:.3e}"),
        });
    }

    let chain = OracleProblem::chain3();
    let gpg = gpg_consistency_experiment(
        &chain.mdp,
        &chain.policy,
        chain.horizon,
        &BinningConfig::Time,
        &opts.n_list,
        opts.repetitions,
        opts.seed,
    )?;
    consistency_assertions("chain3 time binning", &gpg, opts, &mut assertions);
    let reinforce = consistency_experiment(
        &chain.mdp,
        &chain.policy,
        chain.horizon,
        &Estimator::Reinforce,
        &opts.n_list,
        opts.repetitions,
        opts.seed,
    )?;
    let top = *opts.n_list.iter().max().expect("nonempty N list");
    let (g, r) = (
        gpg.median_error_at(top).unwrap_or(f64::NAN),
        reinforce.median_error_at(top).unwrap_or(f64::NAN),
    );
    assertions.push(Assertion {
        name: format!("chain3: time binning error below no-baseline error at N={top}"),
        passed: g < r,
        detail: format!("{g:.4} vs {r:.4}"),
    });

    let grid = OracleProblem::grid();
    let state = gpg_consistency_experiment(
        &grid.mdp,
        &grid.policy,
        grid.horizon,
        &BinningConfig::State,
        &opts.n_list,
        opts.repetitions,
        opts.seed,
    )?;
    consistency_assertions("grid state binning", &state, opts, &mut assertions);

    let bandit = OracleProblem::bandit();
    let grpo = grpo_corollary_check(
        &bandit.mdp,
        &bandit.policy,
        bandit.horizon,
        &opts.n_list,
        opts.repetitions,
        opts.seed,
    )?;
    consistency_assertions("bandit normalised outcome", &grpo, opts, &mut assertions);

    reports.extend([gpg, reinforce, state, grpo]);
    std::fs::create_dir_all(out)?;
    let mut w = csv::Writer::from_path(out.join("oracle.csv"))?;
    w.write_record(["estimator", "N", "repetition", "rel_error"])?;
    for (label, report) in ["chain3", "chain3", "grid", "bandit"].iter().zip(&reports) {
        for mut row in report.csv_rows() {
            row[0] = format!("{label}/{}", row[0]);
            w.write_record(&row)?;
        }
    }
    w.flush()?;

    std::fs::write(out.join("oracle_summary.txt"), summary_text(&assertions))?;
    Ok(assertions)
}

pub fn summary_text(assertions: &[Assertion]) -> String {
    let mut s = String::new();
    for a in assertions {
        let _ = writeln!(s, "{} {} ({})", if a.passed { "PASS" } else { "FAIL" }, a.name, a.detail);
    }
    s
}
