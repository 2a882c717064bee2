use rand::Rng;

use super::{ActionSpace, EnvSpec, Environment, ObservationSpace, Transition};
use crate::mdp::{Action, Observation};
use crate::rng::{self, StreamRng};
use crate::Result;

const BOUND: f64 = 2.0;
const DT: f64 = 0.1;
const MAX_FORCE: f64 = 1.0;
const MAX_STEPS: usize = 100;
const START_SPREAD: f64 = 1.5;

/// A 2-D point mass pushed towards the origin.
///
/// Observation `[px, py, vx, vy]`, each clamped to `[-2, 2]`. The action is a force
/// in `[-1, 1]^2` (clipped before use). Reward is minus the distance of the new
/// position from the origin. Episodes never terminate and are truncated after 100 steps.
#[derive(Debug, Clone)]
pub struct PointMass {
    state: [f64; 4],
    elapsed: usize,
    rng: StreamRng,
}

impl Default for PointMass {
    fn default() -> Self {
        Self::new()
    }
}

impl PointMass {
    pub fn new() -> Self {
        Self {
            state: [0.0; 4],
            elapsed: 0,
            rng: rng::stream(0, 0),
        }
    }

    fn observe(&self) -> Observation {
        Observation::Real(self.state.to_vec())
    }
}

impl Environment for PointMass {
    fn spec(&self) -> EnvSpec {
        EnvSpec {
            observation: ObservationSpace::Real { dim: 4 },
            action: ActionSpace::Real {
                low: vec![-MAX_FORCE; 2],
                high: vec![MAX_FORCE; 2],
            },
            reward_bound: BOUND * std::f64::consts::SQRT_2,
            max_episode_steps: MAX_STEPS,
        }
    }

    fn reset(&mut self, seed: Option<u64>) -> Observation {
        if let Some(seed) = seed {
            self.rng = rng::stream(seed, 0);
        }
        self.state = [
            self.rng.random_range(-START_SPREAD..=START_SPREAD),
            self.rng.random_range(-START_SPREAD..=START_SPREAD),
            0.0,
            0.0,
        ];
        self.elapsed = 0;
        self.observe()
    }

    fn set_rng(&mut self, rng: StreamRng) {
        self.rng = rng;
    }

    fn step(&mut self, action: &Action) -> Result<Transition> {
        self.spec().action.check(action)?;
        let force = action.as_real().unwrap_or(&[0.0, 0.0]);
        for i in 0..2 {
            let f = force[i].clamp(-MAX_FORCE, MAX_FORCE);
            let f = if f.is_nan() { 0.0 } else { f };
            self.state[i + 2] = (self.state[i + 2] + DT * f).clamp(-BOUND, BOUND);
            self.state[i] = (self.state[i] + DT * self.state[i + 2]).clamp(-BOUND, BOUND);
        }
        self.elapsed += 1;
        let reward = -self.state[0].hypot(self.state[1]);
        Ok(Transition {
            observation: self.observe(),
            reward,
            terminated: false,
            truncated: self.elapsed >= MAX_STEPS,
        })
    }
}
