use rayon::prelude::*;

use super::{EnvId, EnvSpec, Environment};
use crate::mdp::{Action, Observation, RawRollout, StepRecord};
use crate::rng::{self, StreamRng, ACTION_STREAM_BASE, ENV_STREAM_BASE};
use crate::{Error, Result};

struct Slot {
    env: Box<dyn Environment>,
    observation: Observation,
    timestep: usize,
    action_rng: StreamRng,
    episode_return: f64,
    episode_length: usize,
}

/// Outcome of stepping one slot.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotStep {
    /// Observation the slot will act on next: the reset observation after a done step.
    pub observation: Observation,
    pub reward: f64,
    pub terminated: bool,
    pub truncated: bool,
    /// The real last observation of an episode that just ended by time limit.
    pub final_observation: Option<Observation>,
    /// Episode timestep of the step just taken.
    pub episode_timestep: usize,
}

/// A finished episode seen during collection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeStats {
    pub episode_return: f64,
    pub length: usize,
}

/// `num_envs` copies of an environment stepped together with autoreset.
///
/// Slot `k` owns environment stream `k` and action stream `k` of the seed, so
/// trajectories do not depend on the order (or thread) in which slots are stepped.
pub struct VectorizedEnv {
    slots: Vec<Slot>,
    spec: EnvSpec,
}

impl VectorizedEnv {
    pub fn new(id: &EnvId, num_envs: usize, seed: u64) -> Result<Self> {
        if num_envs == 0 {
            return Err(Error::invalid("num_envs must be positive"));
        }
        let slots = (0..num_envs)
            .map(|k| {
                let mut env = id.make();
                env.set_rng(rng::stream(seed, ENV_STREAM_BASE + k as u64));
                let observation = env.reset(None);
                Slot {
                    env,
                    observation,
                    timestep: 0,
                    action_rng: rng::stream(seed, ACTION_STREAM_BASE + k as u64),
                    episode_return: 0.0,
                    episode_length: 0,
                }
            })
            .collect::<Vec<_>>();
        let spec = slots[0].env.spec();
        Ok(Self { slots, spec })
    }

    pub fn num_envs(&self) -> usize {
        self.slots.len()
    }

    pub fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    pub fn observations(&self) -> Vec<Observation> {
        self.slots.iter().map(|s| s.observation.clone()).collect()
    }

    /// Episode timestep each slot will act at next.
    pub fn timesteps(&self) -> Vec<usize> {
        self.slots.iter().map(|s| s.timestep).collect()
    }

    /// Steps every slot with its action; done slots are reset immediately.
    pub fn step(&mut self, actions: &[Action]) -> Result<Vec<SlotStep>> {
        if actions.len() != self.slots.len() {
            return Err(Error::invalid(format!(
                "{} actions for {} environments",
                actions.len(),
                self.slots.len()
            )));
        }
        self.slots
            .iter_mut()
            .zip(actions)
            .map(|(slot, a)| slot.step(a).map(|(s, _)| s))
            .collect()
    }

    /// Runs every slot for `rollout_length` steps with actions from `act` and returns
    /// the time-major stream plus the episodes that finished along the way.
    ///
    /// `act` receives the slot's observation and its private action stream and returns
    /// the action with its log-probability; its first error aborts the collection. With `parallel` set, slots run on the rayon
    /// pool; the result is identical either way.
    pub fn collect<F>(
        &mut self,
        rollout_length: usize,
        parallel: bool,
        act: F,
    ) -> Result<(RawRollout, Vec<EpisodeStats>)>
    where
        F: Fn(&Observation, &mut StreamRng) -> Result<(Action, f64)> + Sync,
    {
        let run = |slot: &mut Slot| slot.run(rollout_length, &act);
        let per_slot: Vec<Result<SlotRun>> = if parallel {
            self.slots.par_iter_mut().map(run).collect()
        } else {
            self.slots.iter_mut().map(run).collect()
        };
        let per_slot = per_slot.into_iter().collect::<Result<Vec<_>>>()?;

        let num_envs = self.slots.len();
        let mut raw = RawRollout {
            num_envs,
            steps: Vec::with_capacity(num_envs * rollout_length),
            final_observations: Vec::with_capacity(num_envs * rollout_length),
            last_observations: self.observations(),
        };
        let mut runs: Vec<_> = per_slot
            .iter()
            .map(|r| r.steps.iter().zip(&r.finals))
            .collect();
        for _ in 0..rollout_length {
            for it in runs.iter_mut() {
                let (step, fin) = it.next().expect("every slot ran the full rollout");
                raw.steps.push(step.clone());
                raw.final_observations.push(fin.clone());
            }
        }
        let episodes = per_slot.into_iter().flat_map(|r| r.episodes).collect();
        Ok((raw, episodes))
    }
}

struct SlotRun {
    steps: Vec<StepRecord>,
    finals: Vec<Option<Observation>>,
    episodes: Vec<EpisodeStats>,
}

impl Slot {
    fn step(&mut self, action: &Action) -> Result<(SlotStep, Option<EpisodeStats>)> {
        let tr = self.env.step(action)?;
        let episode_timestep = self.timestep;
        self.episode_return += tr.reward;
        self.episode_length += 1;
        let done = tr.terminated || tr.truncated;
        let mut finished = None;
        let (observation, final_observation) = if done {
            finished = Some(EpisodeStats {
                episode_return: self.episode_return,
                length: self.episode_length,
            });
            self.episode_return = 0.0;
            self.episode_length = 0;
            self.timestep = 0;
            let fresh = self.env.reset(None);
            let fin = tr.truncated.then_some(tr.observation);
            (fresh, fin)
        } else {
            self.timestep += 1;
            (tr.observation, None)
        };
        self.observation = observation.clone();
        Ok((
            SlotStep {
                observation,
                reward: tr.reward,
                terminated: tr.terminated,
                truncated: tr.truncated,
                final_observation,
                episode_timestep,
            },
            finished,
        ))
    }

    fn run<F>(&mut self, rollout_length: usize, act: &F) -> Result<SlotRun>
    where
        F: Fn(&Observation, &mut StreamRng) -> Result<(Action, f64)>,
    {
        let mut run = SlotRun {
            steps: Vec::with_capacity(rollout_length),
            finals: Vec::with_capacity(rollout_length),
            episodes: Vec::new(),
        };
        for _ in 0..rollout_length {
            let obs = self.observation.clone();
            let (action, log_prob) = act(&obs, &mut self.action_rng)?;
            let (out, finished) = self.step(&action)?;
            run.steps.push(StepRecord {
                observation: obs,
                action,
                reward: out.reward,
                behavior_log_prob: log_prob,
                episode_timestep: out.episode_timestep,
                terminated: out.terminated,
                truncated: out.truncated,
            });
            run.finals.push(out.final_observation);
            run.episodes.extend(finished);
        }
        Ok(run)
    }
}
