//! The optimisation loop: collect a group, estimate advantages, then run epochs of
//! clipped-surrogate minibatch updates with Adam.

mod config;
mod loss;
mod optim;

use std::time::Instant;

use rand::seq::SliceRandom;

pub use config::{Algorithm, TrainConfig};
pub use loss::{clipped_objective, clipped_surrogate_loss, value_loss, SurrogateStats, TrainStep};
pub use optim::{adam_step, adam_step_parts, clip_grad_norm, global_norm, AdamParams, AdamState};

use crate::advantage::{
    build_bin_table, gae_advantages, gpg_advantages, grpo_outcome_advantages, normalize_advantages,
    population_std, EPS_NUM,
};
use crate::env::{EnvId, VectorizedEnv};
use crate::mdp::{segment_rollout, Observation, ReturnsTable, RolloutGroup};
use crate::policy::{Checkpoint, InputEncoding, PolicyModel, ValueNet};
use crate::rng::{self, StreamRng, EVAL_STREAM_BASE, INIT_STREAM, SHUFFLE_STREAM};
use crate::{Error, Result};

/// Summary of one training iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationMetrics {
    pub iteration: usize,
    /// Environment steps taken so far, this iteration included.
    pub env_steps: u64,
    /// Mean and population std of the undiscounted returns of episodes that finished
    /// during this iteration's collection. When none finished, the previous values are
    /// carried; before the first finished episode the partial returns of the current
    /// segments stand in.
    pub mean_return: f64,
    pub std_return: f64,
    pub episodes_finished: usize,
    pub loss_pi: f64,
    pub loss_v: f64,
    pub entropy: f64,
    pub clip_frac: f64,
    /// Mean global gradient norm before clipping.
    pub grad_norm: f64,
    pub effective_group_size: usize,
    pub wall_ms: f64,
}

impl IterationMetrics {
    pub const CSV_HEADER: [&'static str; 11] = [
        "iteration",
        "env_steps",
        "mean_return",
        "std_return",
        "loss_pi",
        "loss_v",
        "entropy",
        "clip_frac",
        "grad_norm",
        "effective_group_size",
        "wall_ms",
    ];

    pub fn csv_record(&self) -> [String; 11] {
        [
            self.iteration.to_string(),
            self.env_steps.to_string(),
            self.mean_return.to_string(),
            self.std_return.to_string(),
            self.loss_pi.to_string(),
            self.loss_v.to_string(),
            self.entropy.to_string(),
            self.clip_frac.to_string(),
            self.grad_norm.to_string(),
            self.effective_group_size.to_string(),
            format!("{:.3}", self.wall_ms),
        ]
    }
}

/// Advantages and value targets for every step of a group, segment by segment.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupAdvantages {
    pub advantages: Vec<Vec<f64>>,
    pub targets: Vec<Vec<f64>>,
}

/// Advantage path of `algorithm` over `group`.
///
/// For PPO `value` must be present; bootstraps are 0 after termination and the value of
/// the next observation otherwise. For GRPO the outcome of a segment is its undiscounted
/// reward sum; a group with a single segment gets zero advantages.
pub fn group_advantages(
    config: &TrainConfig,
    group: &RolloutGroup,
    returns: &ReturnsTable,
    value: Option<&ValueNet>,
) -> Result<GroupAdvantages> {
    let advantages = match &config.algorithm {
        Algorithm::Gpg(binning) => {
            let table = build_bin_table(group, returns, binning)?;
            gpg_advantages(group, returns, &table, config.loo_baseline)?.values
        }
        Algorithm::GrpoOutcome => {
            let outcomes: Vec<f64> = group.segments.iter().map(|s| s.rewards().sum()).collect();
            let per_segment = if outcomes.len() < 2 {
                vec![0.0; outcomes.len()]
            } else {
                grpo_outcome_advantages(&outcomes, EPS_NUM)?
            };
            group
                .segments
                .iter()
                .zip(per_segment)
                .map(|(s, a)| vec![a; s.len()])
                .collect()
        }
        Algorithm::Ppo => {
            let value = value.ok_or_else(|| Error::Internal("PPO without a value network".into()))?;
            let mut cache = value.cache();
            let mut advantages = Vec::with_capacity(group.segments.len());
            let mut targets = Vec::with_capacity(group.segments.len());
            for seg in &group.segments {
                let values = seg
                    .steps
                    .iter()
                    .map(|s| value.forward(&s.observation, &mut cache))
                    .collect::<Result<Vec<_>>>()?;
                let bootstrap = match (&seg.next_observation, seg.complete) {
                    (Some(next), false) => value.forward(next, &mut cache)?,
                    _ => 0.0,
                };
                let rewards: Vec<f64> = seg.rewards().collect();
                let adv = gae_advantages(&rewards, &values, bootstrap, config.gamma, config.gae_lambda)?;
                targets.push(adv.iter().zip(&values).map(|(a, v)| a + v).collect());
                advantages.push(adv);
            }
            return Ok(GroupAdvantages { advantages, targets });
        }
    };
    Ok(GroupAdvantages {
        advantages,
        targets: returns.rows.clone(),
    })
}

/// Owns the policy, the optional value network, the optimizer and the environments of
/// one training run.
pub struct Trainer {
    config: TrainConfig,
    env_id: EnvId,
    venv: VectorizedEnv,
    policy: PolicyModel,
    value: Option<ValueNet>,
    optimizer: AdamState,
    shuffle_rng: StreamRng,
    iteration: usize,
    env_steps: u64,
    parallel: bool,
    last_returns: Option<(f64, f64)>,
    last_gradient: Vec<f64>,
}

impl Trainer {
    /// Builds a run from the config; parameters are initialised from the run seed. The
    /// value network is created only for PPO, after the policy, so the policy
    /// initialisation does not depend on the algorithm.
    pub fn new(env_id: EnvId, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let venv = VectorizedEnv::new(&env_id, config.num_envs, config.seed)?;
        let spec = venv.spec().clone();
        let mut init = rng::stream(config.seed, INIT_STREAM);
        let policy = PolicyModel::for_env(&spec, &config.hidden, &mut init);
        let value = config
            .algorithm
            .uses_value_net()
            .then(|| ValueNet::new(InputEncoding::for_space(spec.observation), &config.hidden, &mut init));
        let n = policy.num_params() + value.as_ref().map_or(0, ValueNet::num_params);
        Ok(Self {
            shuffle_rng: rng::stream(config.seed, SHUFFLE_STREAM),
            optimizer: AdamState::new(n),
            parallel: rayon::current_num_threads() > 1,
            config,
            env_id,
            venv,
            policy,
            value,
            iteration: 0,
            env_steps: 0,
            last_returns: None,
            last_gradient: Vec::new(),
        })
    }

    /// Replaces the initial policy, e.g. with one loaded from a checkpoint.
    pub fn with_policy(mut self, policy: PolicyModel) -> Result<Self> {
        policy.check_compatible(self.venv.spec())?;
        if policy.num_params() != self.policy.num_params() {
            let n = policy.num_params() + self.value.as_ref().map_or(0, ValueNet::num_params);
            self.optimizer = AdamState::new(n);
        }
        self.policy = policy;
        Ok(self)
    }

    /// Continues from a checkpoint: parameters, optimizer moments and the iteration
    /// counter are restored; environments and random streams restart from the seed.
    pub fn resume(env_id: EnvId, config: TrainConfig, checkpoint: Checkpoint) -> Result<Self> {
        let mut trainer = Self::new(env_id, config)?.with_policy(checkpoint.policy)?;
        match (&trainer.value, checkpoint.value) {
            (Some(_), Some(v)) => trainer.value = Some(v),
            (None, None) => {}
            (mine, theirs) => {
                return Err(Error::Load(format!(
                    "checkpoint {} a value network, the configured algorithm {} one",
                    if theirs.is_some() { "has" } else { "lacks" },
                    if mine.is_some() { "needs" } else { "has no" }
                )))
            }
        }
        let n = trainer.policy.num_params() + trainer.value.as_ref().map_or(0, ValueNet::num_params);
        if let Some(opt) = checkpoint.optimizer {
            if opt.len() != n || opt.v.len() != n {
                return Err(Error::Load(format!(
                    "optimizer state has {} entries, expected {n}",
                    opt.len()
                )));
            }
            trainer.optimizer = opt;
        }
        trainer.iteration = checkpoint.iteration as usize;
        trainer.env_steps =
            (trainer.iteration * trainer.config.num_envs * trainer.config.rollout_length) as u64;
        Ok(trainer)
    }

    /// Collect slots on the rayon pool (the default when it has more than one thread).
    pub fn set_parallel(&mut self, parallel: bool) {
        self.parallel = parallel;
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn env_id(&self) -> &EnvId {
        &self.env_id
    }

    pub fn policy(&self) -> &PolicyModel {
        &self.policy
    }

    pub fn value_net(&self) -> Option<&ValueNet> {
        self.value.as_ref()
    }

    pub fn optimizer(&self) -> &AdamState {
        &self.optimizer
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    /// Policy part of the loss gradient of the last minibatch, before clipping.
    pub fn last_gradient(&self) -> &[f64] {
        &self.last_gradient
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            env_id: self.env_id.to_string(),
            iteration: self.iteration as u64,
            policy: self.policy.clone(),
            value: self.value.clone(),
            optimizer: Some(self.optimizer.clone()),
        }
    }

    /// Collects one group with the current policy and segments it.
    pub fn collect_group(&mut self) -> Result<(RolloutGroup, Vec<crate::env::EpisodeStats>)> {
        let policy = &self.policy;
        let (raw, episodes) = self.venv.collect(self.config.rollout_length, self.parallel, |obs, rng| {
            policy.sample_action(obs, rng)
        })?;
        self.env_steps += raw.steps.len() as u64;
        Ok((segment_rollout(&raw, self.iteration)?, episodes))
    }

    fn learning_rate(&self) -> f64 {
        if self.config.anneal_lr {
            let frac = 1.0 - self.iteration as f64 / self.config.iterations as f64;
            self.config.learning_rate * frac.max(0.0)
        } else {
            self.config.learning_rate
        }
    }

    pub fn train_iteration(&mut self) -> Result<IterationMetrics> {
        let start = Instant::now();
        let lr = self.learning_rate();
        let (group, episodes) = self.collect_group()?;
        let returns = group.returns(self.config.gamma)?;
        let adv = group_advantages(&self.config, &group, &returns, self.value.as_ref())?;

        let mut batch = Vec::with_capacity(group.num_steps());
        for (s, seg) in group.segments.iter().enumerate() {
            if self.config.exclude_truncated_from_update && !seg.complete {
                continue;
            }
            for (t, record) in seg.steps.iter().enumerate() {
                batch.push(TrainStep {
                    record,
                    advantage: adv.advantages[s][t],
                    target: adv.targets[s][t],
                });
            }
        }

        let mut totals = SurrogateStats::default();
        let (mut loss_v, mut grad_norm, mut updates) = (0.0, 0.0, 0usize);
        if !batch.is_empty() {
            let n_pi = self.policy.num_params();
            let n_v = self.value.as_ref().map_or(0, ValueNet::num_params);
            let mut grad_pi = vec![0.0; n_pi];
            let mut grad_v = vec![0.0; n_v];
            let mut scratch = self.policy.scratch();
            let mut order: Vec<usize> = (0..batch.len()).collect();
            let chunk = batch.len().div_ceil(self.config.num_minibatches);
            let hp = AdamParams {
                lr,
                betas: self.config.adam_betas,
                eps: self.config.adam_eps,
            };
            for epoch in 0..self.config.update_epochs {
                order.shuffle(&mut self.shuffle_rng);
                for (mb, idx) in order.chunks(chunk).enumerate() {
                    let mut minibatch: Vec<TrainStep> = idx.iter().map(|&i| batch[i]).collect();
                    if self.config.normalize_adv && minibatch.len() > 1 {
                        let raw: Vec<f64> = minibatch.iter().map(|s| s.advantage).collect();
                        for (s, a) in minibatch.iter_mut().zip(normalize_advantages(&raw, EPS_NUM)) {
                            s.advantage = a;
                        }
                    }
                    grad_pi.fill(0.0);
                    grad_v.fill(0.0);
                    let stats = clipped_surrogate_loss(
                        &self.policy,
                        &minibatch,
                        self.config.clip_eps,
                        self.config.entropy_coef,
                        &mut scratch,
                        &mut grad_pi,
                    )?;
                    let lv = match &self.value {
                        Some(v) => value_loss(&self.config.algorithm, v, &minibatch, self.config.value_coef, &mut grad_v)?,
                        None => 0.0,
                    };
                    let total = stats.loss - self.config.entropy_coef * stats.entropy + self.config.value_coef * lv;
                    if !total.is_finite() {
                        return Err(self.numerical_abort(epoch, mb, &stats, lv));
                    }
                    self.last_gradient.clone_from(&grad_pi);
                    let norm = clip_grad_norm(&mut [&mut grad_pi, &mut grad_v], self.config.max_grad_norm);
                    if !norm.is_finite() {
                        return Err(self.numerical_abort(epoch, mb, &stats, lv));
                    }
                    match &mut self.value {
                        Some(v) => adam_step_parts(
                            &mut [(self.policy.theta_mut(), &grad_pi), (v.phi_mut(), &grad_v)],
                            &mut self.optimizer,
                            hp,
                        ),
                        None => adam_step(self.policy.theta_mut(), &grad_pi, &mut self.optimizer, hp),
                    }
                    totals.loss += stats.loss;
                    totals.entropy += stats.entropy;
                    totals.clip_frac += stats.clip_frac;
                    loss_v += lv;
                    grad_norm += norm;
                    updates += 1;
                }
            }
        }
        let k = updates.max(1) as f64;

        let (mean_return, std_return) = if !episodes.is_empty() {
            let r: Vec<f64> = episodes.iter().map(|e| e.episode_return).collect();
            (r.iter().sum::<f64>() / r.len() as f64, population_std(&r))
        } else if let Some(prev) = self.last_returns {
            prev
        } else {
            let r: Vec<f64> = group.segments.iter().map(|s| s.rewards().sum()).collect();
            (r.iter().sum::<f64>() / r.len() as f64, population_std(&r))
        };
        if !episodes.is_empty() {
            self.last_returns = Some((mean_return, std_return));
        }

        self.iteration += 1;
        Ok(IterationMetrics {
            iteration: self.iteration,
            env_steps: self.env_steps,
            mean_return,
            std_return,
            episodes_finished: episodes.len(),
            loss_pi: totals.loss / k,
            loss_v: loss_v / k,
            entropy: totals.entropy / k,
            clip_frac: totals.clip_frac / k,
            grad_norm: grad_norm / k,
            effective_group_size: group.effective_group_size(),
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        })
    }

    fn numerical_abort(&self, epoch: usize, minibatch: usize, stats: &SurrogateStats, loss_v: f64) -> Error {
        let theta_norm = global_norm(&[self.policy.theta()]);
        let phi_norm = self.value.as_ref().map(|v| global_norm(&[v.phi()]));
        Error::Numerical(format!(
            "non-finite loss at iteration {} epoch {epoch} minibatch {minibatch}: \
             loss_pi {}, entropy {}, loss_v {loss_v}, |theta| {theta_norm}, |phi| {phi_norm:?}, \
             optimizer step {}",
            self.iteration, stats.loss, stats.entropy, self.optimizer.step
        ))
    }

    /// Runs the configured number of iterations, calling `on_iteration` after each.
    pub fn train(&mut self, mut on_iteration: impl FnMut(&IterationMetrics)) -> Result<Vec<IterationMetrics>> {
        let mut out = Vec::with_capacity(self.config.iterations);
        while self.iteration < self.config.iterations {
            let m = self.train_iteration()?;
            on_iteration(&m);
            out.push(m);
        }
        Ok(out)
    }
}

/// Mean and population std of episodic returns.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSummary {
    pub mean: f64,
    pub std: f64,
    pub returns: Vec<f64>,
}

/// Runs `n_eval_seeds` fresh episodes with actions sampled from the policy. Episode `i`
/// uses evaluation streams of `seed` that no training run touches.
pub fn evaluate(policy: &PolicyModel, env_id: &EnvId, n_eval_seeds: usize, seed: u64) -> Result<EvalSummary> {
    policy.check_compatible(&env_id.spec())?;
    let mut scratch = policy.scratch();
    let returns = (0..n_eval_seeds as u64)
        .map(|i| {
            let mut env = env_id.make();
            env.set_rng(rng::stream(seed, EVAL_STREAM_BASE + 2 * i));
            let mut action_rng = rng::stream(seed, EVAL_STREAM_BASE + 2 * i + 1);
            let mut obs: Observation = env.reset(None);
            let mut total = 0.0;
            loop {
                let (action, _) = policy.sample_with(&obs, &mut action_rng, &mut scratch)?;
                let tr = env.step(&action)?;
                total += tr.reward;
                if tr.terminated || tr.truncated {
                    return Ok(total);
                }
                obs = tr.observation;
            }
        })
        .collect::<Result<Vec<f64>>>()?;
    if returns.is_empty() {
        return Err(Error::invalid("evaluation needs at least one episode"));
    }
    Ok(EvalSummary {
        mean: returns.iter().sum::<f64>() / returns.len() as f64,
        std: population_std(&returns),
        returns,
    })
}
