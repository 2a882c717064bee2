use crate::{Error, Result};

/// Population standard deviation (divides by `n`).
pub fn population_std(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    (xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n).sqrt()
}

/// `(x - mean) / max(std, eps_num)` with the population std.
pub fn normalize_advantages(batch: &[f64], eps_num: f64) -> Vec<f64> {
    if batch.is_empty() {
        return Vec::new();
    }
    let mean = batch.iter().sum::<f64>() / batch.len() as f64;
    let denom = population_std(batch).max(eps_num);
    batch.iter().map(|x| (x - mean) / denom).collect()
}

/// Outcome-supervision advantages: each trajectory's reward normalised across the group.
pub fn grpo_outcome_advantages(terminal_rewards: &[f64], eps_num: f64) -> Result<Vec<f64>> {
    if terminal_rewards.len() < 2 {
        return Err(Error::invalid(format!(
            "outcome normalisation needs at least 2 trajectories, got {}",
            terminal_rewards.len()
        )));
    }
    Ok(normalize_advantages(terminal_rewards, eps_num))
}

/// Truncated GAE by the backward recurrence `A_t = delta_t + gamma * lambda * A_{t+1}`,
/// `delta_t = r_t + gamma * V(s_{t+1}) - V(s_t)`.
///
/// `values[t] = V(s_t)` for every step; `bootstrap` is `V(s_{T+1})`, which callers set
/// to 0 when the segment terminated.
pub fn gae_advantages(rewards: &[f64], values: &[f64], bootstrap: f64, gamma: f64, lambda: f64) -> Result<Vec<f64>> {
    if rewards.len() != values.len() {
        return Err(Error::invalid(format!(
            "{} rewards but {} values",
            rewards.len(),
            values.len()
        )));
    }
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    let mut next_value = bootstrap;
    for t in (0..rewards.len()).rev() {
        let delta = rewards[t] + gamma * next_value - values[t];
        acc = delta + gamma * lambda * acc;
        out[t] = acc;
        next_value = values[t];
    }
    Ok(out)
}
