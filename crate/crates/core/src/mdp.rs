//! Trajectory data model shared by every other module.

use crate::{Error, Result};

/// An environment observation.
#[derive(Debug, Clone, PartialEq)]
pub enum Observation {
    Real(Vec<f64>),
    Discrete(usize),
}

impl Observation {
    pub fn as_real(&self) -> Option<&[f64]> {
        match self {
            Observation::Real(v) => Some(v),
            Observation::Discrete(_) => None,
        }
    }

    pub fn as_discrete(&self) -> Option<usize> {
        match self {
            Observation::Discrete(s) => Some(*s),
            Observation::Real(_) => None,
        }
    }
}

/// An action emitted by a policy.
#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    Discrete(usize),
    Real(Vec<f64>),
}

impl Action {
    pub fn as_discrete(&self) -> Option<usize> {
        match self {
            Action::Discrete(a) => Some(*a),
            Action::Real(_) => None,
        }
    }

    pub fn as_real(&self) -> Option<&[f64]> {
        match self {
            Action::Real(v) => Some(v),
            Action::Discrete(_) => None,
        }
    }
}

/// One transition as seen by the learner.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub observation: Observation,
    pub action: Action,
    pub reward: f64,
    /// `log pi_old(a_t | s_t)` recorded at collection time.
    pub behavior_log_prob: f64,
    /// Within-episode timestep; restarts at 0 whenever an episode starts.
    pub episode_timestep: usize,
    pub terminated: bool,
    pub truncated: bool,
}

impl StepRecord {
    pub fn done(&self) -> bool {
        self.terminated || self.truncated
    }
}

/// A contiguous run of steps from one environment slot.
///
/// The first step of a segment is either an episode start (`episode_timestep == 0`) or
/// the continuation of an episode that began in an earlier rollout. Timesteps are
/// consecutive within the segment. Only the last step may carry a done flag.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeSegment {
    pub steps: Vec<StepRecord>,
    /// True iff the last step terminated.
    pub complete: bool,
    /// Slot of the vectorized environment the segment came from.
    pub env_index: usize,
    /// The observation following the last step when the episode did not terminate:
    /// the time-limit final observation, or the live observation at a rollout boundary.
    pub next_observation: Option<Observation>,
}

impl EpisodeSegment {
    /// Validates the segment invariants and builds it.
    pub fn new(
        steps: Vec<StepRecord>,
        env_index: usize,
        next_observation: Option<Observation>,
    ) -> Result<Self> {
        if steps.is_empty() {
            return Err(Error::invalid("episode segment must be nonempty"));
        }
        let last = steps.len() - 1;
        for (i, step) in steps.iter().enumerate() {
            if step.terminated && step.truncated {
                return Err(Error::Corruption(format!(
                    "step {i} is both terminated and truncated"
                )));
            }
            if step.done() && i != last {
                return Err(Error::Corruption(format!(
                    "done flag on step {i} of a {}-step segment",
                    steps.len()
                )));
            }
            if i > 0 && step.episode_timestep != steps[i - 1].episode_timestep + 1 {
                return Err(Error::Corruption(format!(
                    "timestep jumps from {} to {} inside a segment",
                    steps[i - 1].episode_timestep, step.episode_timestep
                )));
            }
        }
        let complete = steps[last].terminated;
        Ok(Self {
            steps,
            complete,
            env_index,
            next_observation,
        })
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn rewards(&self) -> impl Iterator<Item = f64> + '_ {
        self.steps.iter().map(|s| s.reward)
    }

    /// True when the segment covers a whole episode from its first step.
    pub fn starts_episode(&self) -> bool {
        self.steps[0].episode_timestep == 0
    }
}

/// The trajectories collected in one iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutGroup {
    pub segments: Vec<EpisodeSegment>,
    /// Number of parallel environments `N`.
    pub nominal_group_size: usize,
    pub iteration_index: usize,
}

impl RolloutGroup {
    /// Number of segments; exceeds the nominal size when autoresets occurred.
    pub fn effective_group_size(&self) -> usize {
        self.segments.len()
    }

    pub fn num_steps(&self) -> usize {
        self.segments.iter().map(EpisodeSegment::len).sum()
    }

    /// Discounted returns for every segment.
    pub fn returns(&self, gamma: f64) -> Result<ReturnsTable> {
        let rows = self
            .segments
            .iter()
            .map(|seg| compute_returns(&seg.rewards().collect::<Vec<_>>(), gamma))
            .collect::<Result<Vec<_>>>()?;
        Ok(ReturnsTable { rows })
    }
}

/// Per-segment, per-step discounted returns.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnsTable {
    pub rows: Vec<Vec<f64>>,
}

impl ReturnsTable {
    pub fn row(&self, segment: usize) -> &[f64] {
        &self.rows[segment]
    }
}

/// Discounted reward-to-go `R_t = r_t + gamma * R_{t+1}` computed backwards.
///
/// No bootstrap is applied after the last reward.
pub fn compute_returns(rewards: &[f64], gamma: f64) -> Result<Vec<f64>> {
    if rewards.is_empty() {
        return Err(Error::invalid("cannot compute returns of an empty segment"));
    }
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::invalid(format!("gamma must lie in [0, 1], got {gamma}")));
    }
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for (t, r) in rewards.iter().enumerate().rev() {
        acc = r + gamma * acc;
        out[t] = acc;
    }
    Ok(out)
}

/// A fixed-length step stream straight out of a vectorized environment.
///
/// `steps` is time-major: step `t` of slot `k` lives at `t * num_envs + k`.
#[derive(Debug, Clone, Default)]
pub struct RawRollout {
    pub num_envs: usize,
    pub steps: Vec<StepRecord>,
    /// Final observation of each time-limit truncated step, aligned with `steps`.
    pub final_observations: Vec<Option<Observation>>,
    /// Live observation of each slot after the last recorded step.
    pub last_observations: Vec<Observation>,
}

/// Splits a raw stream into episode segments at done markers.
///
/// A trailing unfinished run of a slot becomes an incomplete segment. Concatenating
/// the segments of a slot reproduces that slot's part of the stream.
pub fn segment_rollout(raw: &RawRollout, iteration_index: usize) -> Result<RolloutGroup> {
    let num_envs = raw.num_envs;
    if num_envs == 0 {
        return Err(Error::invalid("num_envs must be positive"));
    }
    if raw.steps.len() % num_envs != 0 {
        return Err(Error::invalid(format!(
            "buffer of {} steps is not a multiple of {num_envs} envs",
            raw.steps.len()
        )));
    }
    let has_finals = !raw.final_observations.is_empty();
    if has_finals && raw.final_observations.len() != raw.steps.len() {
        return Err(Error::invalid("final_observations misaligned with steps"));
    }
    let rollout_length = raw.steps.len() / num_envs;

    let mut per_env: Vec<Vec<EpisodeSegment>> = vec![Vec::new(); num_envs];
    for (env, segments) in per_env.iter_mut().enumerate() {
        let mut current: Vec<StepRecord> = Vec::new();
        let mut prev: Option<&StepRecord> = None;
        for t in 0..rollout_length {
            let idx = t * num_envs + env;
            let step = &raw.steps[idx];
            if let Some(p) = prev {
                let expect = if p.done() { 0 } else { p.episode_timestep + 1 };
                if step.episode_timestep != expect {
                    return Err(Error::Corruption(format!(
                        "env {env} step {t}: episode_timestep {} where {expect} was expected",
                        step.episode_timestep
                    )));
                }
            }
            current.push(step.clone());
            if step.done() {
                let next = if step.truncated && has_finals {
                    raw.final_observations[idx].clone()
                } else {
                    None
                };
                segments.push(EpisodeSegment::new(std::mem::take(&mut current), env, next)?);
            }
            prev = Some(step);
        }
        if !current.is_empty() {
            let next = raw.last_observations.get(env).cloned();
            segments.push(EpisodeSegment::new(current, env, next)?);
        }
    }

    Ok(RolloutGroup {
        segments: per_env.into_iter().flatten().collect(),
        nominal_group_size: num_envs,
        iteration_index,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn step(t: usize, reward: f64, terminated: bool) -> StepRecord {
        StepRecord {
            observation: Observation::Discrete(0),
            action: Action::Discrete(0),
            reward,
            behavior_log_prob: 0.0,
            episode_timestep: t,
            terminated,
            truncated: false,
        }
    }

    fn raw_single(done_at: &[usize], len: usize) -> RawRollout {
        let mut t = 0;
        let mut steps = Vec::new();
        for i in 0..len {
            let done = done_at.contains(&i);
            steps.push(step(t, 1.0, done));
            t = if done { 0 } else { t + 1 };
        }
        RawRollout {
            num_envs: 1,
            steps,
            ..Default::default()
        }
    }

    #[test]
    fn returns_examples() {
        assert_eq!(compute_returns(&[1.0, 1.0, 1.0], 0.5).unwrap(), vec![1.75, 1.5, 1.0]);
        assert_eq!(compute_returns(&[5.0], 0.3).unwrap(), vec![5.0]);
        let r = compute_returns(&[1.0, -1.0, 2.0], 0.9).unwrap();
        for (a, b) in r.iter().zip([1.72, 0.8, 2.0]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn returns_reject_bad_input() {
        assert!(matches!(compute_returns(&[], 0.9), Err(Error::InvalidInput(_))));
        assert!(compute_returns(&[1.0], 1.5).is_err());
    }

    #[test]
    fn segment_two_complete() {
        let g = segment_rollout(&raw_single(&[4, 9], 10), 0).unwrap();
        assert_eq!(g.segments.len(), 2);
        assert!(g.segments.iter().all(|s| s.complete && s.len() == 5));
    }

    #[test]
    fn segment_complete_plus_trailing() {
        let g = segment_rollout(&raw_single(&[4], 10), 0).unwrap();
        assert_eq!(g.segments.len(), 2);
        assert!(g.segments[0].complete);
        assert!(!g.segments[1].complete);
        assert_eq!(g.segments[1].len(), 5);
    }

    #[test]
    fn segment_two_envs_no_dones() {
        let steps = (0..10).map(|i| step(i / 2, 0.0, false)).collect();
        let raw = RawRollout {
            num_envs: 2,
            steps,
            ..Default::default()
        };
        let g = segment_rollout(&raw, 3).unwrap();
        assert_eq!(g.effective_group_size(), 2);
        assert!(g.segments.iter().all(|s| !s.complete));
        assert_eq!(g.iteration_index, 3);
    }

    #[test]
    fn segment_detects_missing_reset() {
        let mut raw = raw_single(&[4], 10);
        raw.steps[5].episode_timestep = 5;
        assert!(matches!(segment_rollout(&raw, 0), Err(Error::Corruption(_))));
    }

    #[test]
    fn segment_detects_double_flag() {
        let mut raw = raw_single(&[4], 10);
        raw.steps[4].truncated = true;
        assert!(matches!(segment_rollout(&raw, 0), Err(Error::Corruption(_))));
    }

    proptest! {
        #[test]
        fn returns_match_double_sum(
            rewards in prop::collection::vec(-10.0f64..10.0, 1..60),
            gamma in 0.0f64..=1.0,
        ) {
            let fast = compute_returns(&rewards, gamma).unwrap();
            for t in 0..rewards.len() {
                let direct: f64 = (t..rewards.len())
                    .map(|s| gamma.powi((s - t) as i32) * rewards[s])
                    .sum();
                prop_assert!((fast[t] - direct).abs() <= 1e-9 * (1.0 + direct.abs()));
                let next = if t + 1 < rewards.len() { fast[t + 1] } else { 0.0 };
                prop_assert_eq!(fast[t], rewards[t] + gamma * next);
            }
        }

        #[test]
        fn segmentation_is_partition(
            num_envs in 1usize..4,
            len in 1usize..30,
            done_mask in prop::collection::vec(prop::bool::weighted(0.2), 120),
        ) {
            let mut steps = Vec::new();
            let mut t = vec![0usize; num_envs];
            for i in 0..len * num_envs {
                let env = i % num_envs;
                let done = done_mask[i % done_mask.len()];
                steps.push(StepRecord { reward: i as f64, ..step(t[env], 0.0, done) });
                t[env] = if done { 0 } else { t[env] + 1 };
            }
            let raw = RawRollout { num_envs, steps: steps.clone(), ..Default::default() };
            let g = segment_rollout(&raw, 0).unwrap();
            for env in 0..num_envs {
                let joined: Vec<StepRecord> = g.segments.iter()
                    .filter(|s| s.env_index == env)
                    .flat_map(|s| s.steps.iter().cloned())
                    .collect();
                let original: Vec<StepRecord> = steps.iter().skip(env).step_by(num_envs).cloned().collect();
                prop_assert_eq!(joined, original);
            }
        }
    }
}
