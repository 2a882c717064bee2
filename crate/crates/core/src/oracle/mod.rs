//! Exact policy gradients on small tabular MDPs and Monte Carlo consistency checks.
//!
//! The objective is the expected undiscounted return over a fixed horizon,
//! `eta = sum_tau p(tau) R(tau)`, and its gradient is enumerated as
//! `sum_tau p(tau) R(tau) grad log p(tau)` for a tabular softmax policy. Sampled
//! estimators are compared against it by relative L2 error.

use rand::Rng;
use rayon::prelude::*;

use crate::advantage::{build_bin_table, gpg_advantages, grpo_outcome_advantages, BinningConfig, EPS_NUM};
use crate::env::{enumerate_trajectories, TabularMdp};
use crate::mdp::{Action, EpisodeSegment, Observation, RolloutGroup, StepRecord};
use crate::policy::{PolicyArch, PolicyModel};
use crate::rng::{self, StreamRng};
use crate::{Error, Result};

/// Action probabilities `pi[s][a]` of a tabular softmax policy sized for `mdp`.
pub fn tabular_probs(mdp: &TabularMdp, policy: &PolicyModel) -> Result<Vec<Vec<f64>>> {
    match policy.arch() {
        PolicyArch::Tabular { states, actions } if *states == mdp.num_states() && *actions == mdp.num_actions() => {}
        other => {
            return Err(Error::invalid(format!(
                "need a {}x{} tabular policy, got {other:?}",
                mdp.num_states(),
                mdp.num_actions()
            )))
        }
    }
    let a = mdp.num_actions();
    Ok(policy
        .theta()
        .chunks(a)
        .map(|logits| {
            let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
            let total: f64 = e.iter().sum();
            e.into_iter().map(|x| x / total).collect()
        })
        .collect())
}

/// Adds `weight * grad log pi(a | s)` for a tabular softmax: `weight * (1{b=a} - pi(b|s))`
/// on row `s`.
fn add_score(grad: &mut [f64], probs: &[Vec<f64>], s: usize, a: usize, weight: f64) {
    let row = &probs[s];
    let base = s * row.len();
    for (b, p) in row.iter().enumerate() {
        let hit = if b == a { 1.0 } else { 0.0 };
        grad[base + b] += weight * (hit - p);
    }
}

/// Policy-dependent probability of an enumerated path.
fn path_prob(probs: &[Vec<f64>], states: &[usize], actions: &[usize], dynamics: f64) -> f64 {
    actions
        .iter()
        .enumerate()
        .fold(dynamics, |p, (t, &a)| p * probs[states[t]][a])
}

/// `eta` and `grad eta` by full enumeration of length-`horizon` paths.
pub fn exact_objective_and_gradient(mdp: &TabularMdp, policy: &PolicyModel, horizon: usize) -> Result<(f64, Vec<f64>)> {
    let probs = tabular_probs(mdp, policy)?;
    let mut eta = 0.0;
    let mut grad = vec![0.0; policy.num_params()];
    for tau in enumerate_trajectories(mdp, horizon)? {
        let p = path_prob(&probs, &tau.states, &tau.actions, tau.dynamics_factor);
        if p == 0.0 {
            continue;
        }
        let ret: f64 = tau.rewards.iter().sum();
        eta += p * ret;
        for (t, &a) in tau.actions.iter().enumerate() {
            add_score(&mut grad, &probs, tau.states[t], a, p * ret);
        }
    }
    Ok((eta, grad))
}

/// `eta` alone by enumeration.
pub fn exact_objective(mdp: &TabularMdp, policy: &PolicyModel, horizon: usize) -> Result<f64> {
    let probs = tabular_probs(mdp, policy)?;
    Ok(enumerate_trajectories(mdp, horizon)?
        .iter()
        .map(|tau| path_prob(&probs, &tau.states, &tau.actions, tau.dynamics_factor) * tau.rewards.iter().sum::<f64>())
        .sum())
}

/// Mean and population std of the total return under the policy, by enumeration.
pub fn return_moments(mdp: &TabularMdp, policy: &PolicyModel, horizon: usize) -> Result<(f64, f64)> {
    let probs = tabular_probs(mdp, policy)?;
    let (mut m1, mut m2) = (0.0, 0.0);
    for tau in enumerate_trajectories(mdp, horizon)? {
        let p = path_prob(&probs, &tau.states, &tau.actions, tau.dynamics_factor);
        let r: f64 = tau.rewards.iter().sum();
        m1 += p * r;
        m2 += p * r * r;
    }
    Ok((m1, (m2 - m1 * m1).max(0.0).sqrt()))
}

/// Central differences of `eta` along each coordinate with step `h`.
pub fn finite_difference_gradient(mdp: &TabularMdp, policy: &PolicyModel, horizon: usize, h: f64) -> Result<Vec<f64>> {
    let mut probe = policy.clone();
    (0..policy.num_params())
        .map(|i| {
            let x = policy.theta()[i];
            probe.theta_mut()[i] = x + h;
            let up = exact_objective(mdp, &probe, horizon)?;
            probe.theta_mut()[i] = x - h;
            let down = exact_objective(mdp, &probe, horizon)?;
            probe.theta_mut()[i] = x;
            Ok((up - down) / (2.0 * h))
        })
        .collect()
}

/// `sum_tau p(tau) sum_t (R_t - b(s_t, t)) grad log pi(a_t | s_t)` for a fixed baseline
/// `b(state, t)`, by enumeration. Equals `grad eta` for every `b`.
pub fn exact_gradient_with_baseline(
    mdp: &TabularMdp,
    policy: &PolicyModel,
    horizon: usize,
    baseline: impl Fn(usize, usize) -> f64,
) -> Result<Vec<f64>> {
    let probs = tabular_probs(mdp, policy)?;
    let mut grad = vec![0.0; policy.num_params()];
    for tau in enumerate_trajectories(mdp, horizon)? {
        let p = path_prob(&probs, &tau.states, &tau.actions, tau.dynamics_factor);
        if p == 0.0 {
            continue;
        }
        let mut to_go = 0.0;
        for t in (0..horizon).rev() {
            to_go += tau.rewards[t];
            let s = tau.states[t];
            add_score(&mut grad, &probs, s, tau.actions[t], p * (to_go - baseline(s, t)));
        }
    }
    Ok(grad)
}

/// Probability that each state is visited within the first `horizon` steps, and the
/// expected reward-to-go from its first visit given that it is visited.
pub fn first_visit_values(mdp: &TabularMdp, policy: &PolicyModel, horizon: usize) -> Result<Vec<Option<(f64, f64)>>> {
    let probs = tabular_probs(mdp, policy)?;
    let mut mass = vec![0.0; mdp.num_states()];
    let mut weighted = vec![0.0; mdp.num_states()];
    for tau in enumerate_trajectories(mdp, horizon)? {
        let p = path_prob(&probs, &tau.states, &tau.actions, tau.dynamics_factor);
        let mut seen = vec![false; mdp.num_states()];
        for t in 0..horizon {
            let s = tau.states[t];
            if !seen[s] {
                seen[s] = true;
                mass[s] += p;
                weighted[s] += p * tau.rewards[t..].iter().sum::<f64>();
            }
        }
    }
    Ok(mass
        .into_iter()
        .zip(weighted)
        .map(|(m, w)| (m > 0.0).then(|| (m, w / m)))
        .collect())
}

/// A sampled gradient estimator.
pub trait GradientEstimator: Sync {
    fn name(&self) -> String;

    /// Gradient estimate from a fresh group of `n` trajectories.
    fn estimate(&self, mdp: &TabularMdp, policy: &PolicyModel, horizon: usize, n: usize, rng: &mut StreamRng) -> Result<Vec<f64>>;
}

/// The sampled estimators under test.
#[derive(Debug, Clone, PartialEq)]
pub enum Estimator {
    /// Group bin baseline.
    Gpg(BinningConfig),
    /// Group-normalised total return on every step.
    GrpoOutcome,
    /// Reward-to-go with no baseline.
    Reinforce,
}

impl GradientEstimator for Estimator {
    fn name(&self) -> String {
        match self {
            Estimator::Gpg(b) => format!("gpg[{b}]"),
            Estimator::GrpoOutcome => "grpo".into(),
            Estimator::Reinforce => "reinforce".into(),
        }
    }

    fn estimate(&self, mdp: &TabularMdp, policy: &PolicyModel, horizon: usize, n: usize, rng: &mut StreamRng) -> Result<Vec<f64>> {
        estimate_gradient(mdp, policy, horizon, self, n, rng)
    }
}

fn sample_index(dist: &[f64], rng: &mut StreamRng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in dist.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    dist.iter().rposition(|p| *p > 0.0).unwrap_or(0)
}

/// Samples `n` length-`horizon` trajectories as a group of segments.
pub fn sample_group(mdp: &TabularMdp, probs: &[Vec<f64>], horizon: usize, n: usize, rng: &mut StreamRng) -> Result<RolloutGroup> {
    let segments = (0..n)
        .map(|i| {
            let mut s = sample_index(mdp.initial(), rng);
            let steps = (0..horizon)
                .map(|t| {
                    let a = sample_index(&probs[s], rng);
                    let next = sample_index(mdp.transition_row(s, a), rng);
                    let step = StepRecord {
                        observation: Observation::Discrete(s),
                        action: Action::Discrete(a),
                        reward: mdp.reward(s, a, next),
                        behavior_log_prob: probs[s][a].ln(),
                        episode_timestep: t,
                        terminated: false,
                        truncated: t + 1 == horizon,
                    };
                    s = next;
                    step
                })
                .collect();
            EpisodeSegment::new(steps, i, Some(Observation::Discrete(s)))
        })
        .collect::<Result<_>>()?;
    Ok(RolloutGroup {
        segments,
        nominal_group_size: n,
        iteration_index: 0,
    })
}

/// `(1/N) sum_n sum_t A_t grad log pi(a_t | s_t)` on a fresh group of `n` trajectories,
/// with `A` chosen by the estimator and undiscounted returns.
pub fn estimate_gradient(
    mdp: &TabularMdp,
    policy: &PolicyModel,
    horizon: usize,
    estimator: &Estimator,
    n: usize,
    rng: &mut StreamRng,
) -> Result<Vec<f64>> {
    if n == 0 || horizon == 0 {
        return Err(Error::invalid("group size and horizon must be positive"));
    }
    let probs = tabular_probs(mdp, policy)?;
    let group = sample_group(mdp, &probs, horizon, n, rng)?;
    let returns = group.returns(1.0)?;
    let advantages = match estimator {
        Estimator::Gpg(binning) => {
            let table = build_bin_table(&group, &returns, binning)?;
            gpg_advantages(&group, &returns, &table, false)?.values
        }
        Estimator::GrpoOutcome => {
            let totals: Vec<f64> = returns.rows.iter().map(|r| r[0]).collect();
            grpo_outcome_advantages(&totals, EPS_NUM)?
                .into_iter()
                .map(|a| vec![a; horizon])
                .collect()
        }
        Estimator::Reinforce => returns.rows.clone(),
    };
    Ok(reinforce_form(&group, &advantages, &probs, policy.num_params()))
}

/// `(1/N) sum_n sum_t A_t grad log pi(a_t | s_t)` for a tabular softmax policy.
pub fn reinforce_form(group: &RolloutGroup, advantages: &[Vec<f64>], probs: &[Vec<f64>], num_params: usize) -> Vec<f64> {
    let mut grad = vec![0.0; num_params];
    let scale = 1.0 / group.segments.len() as f64;
    for (seg, row) in group.segments.iter().zip(advantages) {
        for (step, a) in seg.steps.iter().zip(row) {
            let (Some(s), Some(act)) = (step.observation.as_discrete(), step.action.as_discrete()) else {
                continue;
            };
            add_score(&mut grad, probs, s, act, a * scale);
        }
    }
    grad
}

/// `||estimate - exact|| / max(||exact||, 1e-12)`.
pub fn relative_l2_error(estimate: &[f64], exact: &[f64]) -> f64 {
    let diff: f64 = estimate.iter().zip(exact).map(|(a, b)| (a - b) * (a - b)).sum();
    let norm: f64 = exact.iter().map(|b| b * b).sum();
    diff.sqrt() / norm.sqrt().max(1e-12)
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// One repetition of one group size.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorSample {
    pub n: usize,
    pub repetition: usize,
    pub estimate: Vec<f64>,
    pub rel_error: f64,
}

/// Estimates compared against an enumerated target.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactGradientReport {
    pub estimator: String,
    /// `grad eta`.
    pub exact_gradient: Vec<f64>,
    /// What the estimates converge to: `grad eta`, or `grad eta / std(R)` for GRPO.
    pub target: Vec<f64>,
    /// Sorted by `(n, repetition)`.
    pub samples: Vec<EstimatorSample>,
    /// Violated conditions of the consistency result, if any.
    pub warnings: Vec<String>,
}

impl ExactGradientReport {
    /// `(n, median relative error)` in increasing `n`.
    pub fn median_errors(&self) -> Vec<(usize, f64)> {
        let mut ns: Vec<usize> = self.samples.iter().map(|s| s.n).collect();
        ns.sort_unstable();
        ns.dedup();
        ns.into_iter()
            .map(|n| {
                let errs: Vec<f64> = self.samples.iter().filter(|s| s.n == n).map(|s| s.rel_error).collect();
                (n, median(&errs))
            })
            .collect()
    }

    pub fn is_monotone_non_increasing(&self) -> bool {
        self.median_errors().windows(2).all(|w| w[1].1 <= w[0].1)
    }

    pub fn median_error_at(&self, n: usize) -> Option<f64> {
        self.median_errors().into_iter().find(|(m, _)| *m == n).map(|(_, e)| e)
    }

    /// Rows `(estimator, n, repetition, rel_error)`.
    pub fn csv_rows(&self) -> Vec<[String; 4]> {
        self.samples
            .iter()
            .map(|s| [self.estimator.clone(), s.n.to_string(), s.repetition.to_string(), s.rel_error.to_string()])
            .collect()
    }
}

/// Conditions the consistency argument needs that can fail on a concrete MDP: every
/// state bin must be reachable with positive probability.
pub fn precondition_warnings(mdp: &TabularMdp, policy: &PolicyModel, horizon: usize, binning: &BinningConfig) -> Result<Vec<String>> {
    let mut warnings = Vec::new();
    if !mdp.reward_bound().is_finite() {
        warnings.push("rewards are unbounded".into());
    }
    if *binning == BinningConfig::State {
        let reachable = reachable_states(mdp, horizon);
        for (s, v) in first_visit_values(mdp, policy, horizon)?.iter().enumerate() {
            if reachable[s] && v.is_none() {
                warnings.push(format!(
                    "state {s} is reachable within {horizon} steps but the policy never visits it"
                ));
            }
        }
    }
    Ok(warnings)
}

/// States occupied at some step `t < horizon` under some action sequence.
fn reachable_states(mdp: &TabularMdp, horizon: usize) -> Vec<bool> {
    let n = mdp.num_states();
    let mut seen = vec![false; n];
    let mut frontier: Vec<usize> = (0..n).filter(|&s| mdp.initial()[s] > 0.0).collect();
    for _ in 0..horizon {
        let mut next = Vec::new();
        for &s in &frontier {
            if std::mem::replace(&mut seen[s], true) {
                continue;
            }
            for a in 0..mdp.num_actions() {
                next.extend(
                    mdp.transition_row(s, a)
                        .iter()
                        .enumerate()
                        .filter(|(_, &p)| p > 0.0)
                        .map(|(s2, _)| s2),
                );
            }
        }
        next.sort_unstable();
        next.dedup();
        frontier = next;
    }
    seen
}

fn run_repetitions(
    mdp: &TabularMdp,
    policy: &PolicyModel,
    horizon: usize,
    estimator: &dyn GradientEstimator,
    target: &[f64],
    n_list: &[usize],
    repetitions: usize,
    seed: u64,
) -> Result<Vec<EstimatorSample>> {
    let jobs: Vec<(usize, usize, usize)> = n_list
        .iter()
        .enumerate()
        .flat_map(|(i, &n)| (0..repetitions).map(move |r| (i, n, r)))
        .collect();
    let mut samples = jobs
        .par_iter()
        .map(|&(i, n, r)| {
            let mut rng = rng::stream(seed, ((i as u64) << 32) | r as u64);
            let estimate = estimator.estimate(mdp, policy, horizon, n, &mut rng)?;
            Ok(EstimatorSample {
                n,
                repetition: r,
                rel_error: relative_l2_error(&estimate, target),
                estimate,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    samples.sort_by_key(|s| (s.n, s.repetition));
    Ok(samples)
}

/// Relative error of `estimator` against `grad eta` for each group size in `n_list`,
/// `repetitions` times each. Repetition `r` of the `i`-th size uses stream
/// `(i << 32) | r` of `seed`, so results do not depend on scheduling.
pub fn consistency_experiment(
    mdp: &TabularMdp,
    policy: &PolicyModel,
    horizon: usize,
    estimator: &dyn GradientEstimator,
    n_list: &[usize],
    repetitions: usize,
    seed: u64,
) -> Result<ExactGradientReport> {
    let (_, exact) = exact_objective_and_gradient(mdp, policy, horizon)?;
    if exact.iter().any(|g| !g.is_finite()) {
        return Err(Error::Numerical("exact gradient is not finite".into()));
    }
    let samples = run_repetitions(mdp, policy, horizon, estimator, &exact, n_list, repetitions, seed)?;
    Ok(ExactGradientReport {
        estimator: estimator.name(),
        target: exact.clone(),
        exact_gradient: exact,
        samples,
        warnings: Vec::new(),
    })
}

/// [`consistency_experiment`] for a binned group baseline, with reachability warnings.
pub fn gpg_consistency_experiment(
    mdp: &TabularMdp,
    policy: &PolicyModel,
    horizon: usize,
    binning: &BinningConfig,
    n_list: &[usize],
    repetitions: usize,
    seed: u64,
) -> Result<ExactGradientReport> {
    let mut report = consistency_experiment(
        mdp,
        policy,
        horizon,
        &Estimator::Gpg(binning.clone()),
        n_list,
        repetitions,
        seed,
    )?;
    report.warnings = precondition_warnings(mdp, policy, horizon, binning)?;
    Ok(report)
}

/// Group-normalised outcome estimates against `grad eta / std(R)`, both enumerated.
pub fn grpo_corollary_check(
    mdp: &TabularMdp,
    policy: &PolicyModel,
    horizon: usize,
    n_list: &[usize],
    repetitions: usize,
    seed: u64,
) -> Result<ExactGradientReport> {
    let (_, std) = return_moments(mdp, policy, horizon)?;
    if std < 1e-12 {
        return Err(Error::invalid("total return has zero variance under the policy"));
    }
    if n_list.iter().any(|&n| n < 2) {
        return Err(Error::invalid("outcome normalisation needs groups of at least 2"));
    }
    let (_, exact) = exact_objective_and_gradient(mdp, policy, horizon)?;
    let target: Vec<f64> = exact.iter().map(|g| g / std).collect();
    let estimator = Estimator::GrpoOutcome;
    let samples = run_repetitions(mdp, policy, horizon, &estimator, &target, n_list, repetitions, seed)?;
    Ok(ExactGradientReport {
        estimator: estimator.name(),
        exact_gradient: exact,
        target,
        samples,
        warnings: Vec::new(),
    })
}

/// A tabular MDP with a fixed policy and horizon for the consistency experiments.
#[derive(Debug, Clone)]
pub struct OracleProblem {
    pub name: &'static str,
    pub mdp: TabularMdp,
    pub policy: PolicyModel,
    pub horizon: usize,
}

impl OracleProblem {
    /// Two-armed bandit with arm rewards 0 and 1 under the uniform policy (`std(R) = 1/2`).
    pub fn bandit() -> Self {
        Self {
            name: "bandit",
            mdp: TabularMdp::bandit(),
            policy: PolicyModel::tabular(1, 2),
            horizon: 1,
        }
    }

    /// Deterministic 3-state chain, horizon 3, with a mildly non-uniform policy.
    pub fn chain3() -> Self {
        let logits = vec![0.2, -0.3, -0.4, 0.5, 0.1, 0.0];
        Self {
            name: "chain3",
            mdp: TabularMdp::chain3(),
            policy: PolicyModel::tabular_with_logits(3, 2, logits).expect("3x2 logits"),
            horizon: 3,
        }
    }

    /// Stochastic 4-state chain, horizon 4.
    pub fn chain4() -> Self {
        let logits = vec![-0.2, 0.3, 0.1, 0.4, -0.3, 0.2, 0.0, 0.0];
        Self {
            name: "chain4",
            mdp: TabularMdp::stochastic_chain4(),
            policy: PolicyModel::tabular_with_logits(4, 2, logits).expect("4x2 logits"),
            horizon: 4,
        }
    }

    /// 3x4 cliff grid, horizon 6, under a policy leaning up and right.
    pub fn grid() -> Self {
        let mdp = TabularMdp::cliff_grid(3, 4, 6);
        let logits = (0..12).flat_map(|_| [0.3, 0.3, -0.3, -0.3]).collect();
        Self {
            name: "grid",
            policy: PolicyModel::tabular_with_logits(12, 4, logits).expect("12x4 logits"),
            horizon: mdp.horizon(),
            mdp,
        }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "bandit" => Ok(Self::bandit()),
            "chain3" => Ok(Self::chain3()),
            "chain4" => Ok(Self::chain4()),
            "grid" => Ok(Self::grid()),
            other => Err(Error::config(format!(
                "unknown oracle problem {other:?} (expected bandit, chain3, chain4 or grid)"
            ))),
        }
    }
}
