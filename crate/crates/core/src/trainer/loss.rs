use super::config::Algorithm;
use crate::mdp::StepRecord;
use crate::policy::{PolicyModel, PolicyScratch, ValueNet};
use crate::{Error, Result};

/// One step of an update batch.
#[derive(Debug, Clone, Copy)]
pub struct TrainStep<'a> {
    pub record: &'a StepRecord,
    pub advantage: f64,
    /// Regression target for the value network.
    pub target: f64,
}

/// Batch statistics of the clipped surrogate.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SurrogateStats {
    /// Mean of the negated clipped objective.
    pub loss: f64,
    pub entropy: f64,
    /// Fraction of steps with `|ratio - 1| > clip_eps`.
    pub clip_frac: f64,
}

/// Negated clipped objective `-min(rA, clip(r, 1-e, 1+e)A)` for one step, with the
/// derivative of the (un-negated) objective with respect to `log pi`.
pub fn clipped_objective(ratio: f64, advantage: f64, clip_eps: f64) -> (f64, f64) {
    let unclipped = ratio * advantage;
    let clipped = ratio.clamp(1.0 - clip_eps, 1.0 + clip_eps) * advantage;
    if unclipped <= clipped {
        (unclipped, unclipped)
    } else {
        (clipped, 0.0)
    }
}

/// Mean over `batch` of the negated clipped objective minus `entropy_coef` times the
/// mean entropy; adds the gradient of that loss into `grad`.
///
/// The ratio is `exp(log pi - behavior_log_prob)`; the gradient of each step goes
/// through `ratio * A * grad(log pi)` when the unclipped branch is the minimum and
/// vanishes otherwise.
pub fn clipped_surrogate_loss(
    policy: &PolicyModel,
    batch: &[TrainStep<'_>],
    clip_eps: f64,
    entropy_coef: f64,
    scratch: &mut PolicyScratch,
    grad: &mut [f64],
) -> Result<SurrogateStats> {
    if batch.is_empty() {
        return Err(Error::invalid("empty update batch"));
    }
    let scale = 1.0 / batch.len() as f64;
    let mut stats = SurrogateStats::default();
    let mut clipped = 0usize;
    for (i, step) in batch.iter().enumerate() {
        if !step.advantage.is_finite() {
            return Err(Error::Numerical(format!(
                "advantage {} at batch position {i}",
                step.advantage
            )));
        }
        let eval = policy.evaluate(&step.record.observation, &step.record.action, scratch)?;
        let ratio = (eval.log_prob - step.record.behavior_log_prob).exp();
        if !ratio.is_finite() {
            return Err(Error::Numerical(format!(
                "ratio {ratio} at batch position {i}: log_prob {}, behavior log_prob {}, episode timestep {}",
                eval.log_prob, step.record.behavior_log_prob, step.record.episode_timestep
            )));
        }
        if (ratio - 1.0).abs() > clip_eps {
            clipped += 1;
        }
        let (objective, d_objective) = clipped_objective(ratio, step.advantage, clip_eps);
        stats.loss -= objective * scale;
        stats.entropy += eval.entropy * scale;
        policy.backward(scratch, -d_objective * scale, -entropy_coef * scale, grad);
    }
    stats.clip_frac = clipped as f64 / batch.len() as f64;
    Ok(stats)
}

/// `1/2 mean (V(s) - target)^2`; adds `coef` times its gradient into `grad`.
///
/// Only PPO trains a value network; any other algorithm is a configuration error.
pub fn value_loss(
    algorithm: &Algorithm,
    value: &ValueNet,
    batch: &[TrainStep<'_>],
    coef: f64,
    grad: &mut [f64],
) -> Result<f64> {
    if !algorithm.uses_value_net() {
        return Err(Error::config(format!("{algorithm} has no value network")));
    }
    if batch.is_empty() {
        return Err(Error::invalid("empty update batch"));
    }
    let scale = 1.0 / batch.len() as f64;
    let mut cache = value.cache();
    let mut loss = 0.0;
    for step in batch {
        let diff = value.forward(&step.record.observation, &mut cache)? - step.target;
        loss += 0.5 * diff * diff * scale;
        value.backward(&mut cache, coef * diff * scale, grad);
    }
    Ok(loss)
}
