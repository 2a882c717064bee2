use rand::Rng;

use super::{ActionSpace, EnvSpec, Environment, ObservationSpace, Transition};
use crate::mdp::{Action, Observation};
use crate::rng::{self, StreamRng};
use crate::Result;

const GRAVITY: f64 = 9.8;
const MASS_CART: f64 = 1.0;
const MASS_POLE: f64 = 0.1;
const TOTAL_MASS: f64 = MASS_CART + MASS_POLE;
/// Half the pole length.
const LENGTH: f64 = 0.5;
const POLEMASS_LENGTH: f64 = MASS_POLE * LENGTH;
const FORCE_MAG: f64 = 10.0;
const TAU: f64 = 0.02;
const THETA_THRESHOLD: f64 = 12.0 * 2.0 * std::f64::consts::PI / 360.0;
const X_THRESHOLD: f64 = 2.4;
const MAX_STEPS: usize = 500;

/// Cart-pole balancing with the standard benchmark constants and Euler integration.
///
/// Observation `[x, x_dot, theta, theta_dot]`; action 0 pushes left, 1 pushes right.
#[derive(Debug, Clone)]
pub struct CartPole {
    state: [f64; 4],
    elapsed: usize,
    rng: StreamRng,
}

impl Default for CartPole {
    fn default() -> Self {
        Self::new()
    }
}

impl CartPole {
    pub fn new() -> Self {
        Self {
            state: [0.0; 4],
            elapsed: 0,
            rng: rng::stream(0, 0),
        }
    }

    pub fn state(&self) -> [f64; 4] {
        self.state
    }

    /// Overrides the physical state, keeping the step counter.
    pub fn set_state(&mut self, state: [f64; 4]) {
        self.state = state;
    }

    /// One Euler step of the dynamics under horizontal force `force`.
    pub fn integrate(state: [f64; 4], force: f64) -> [f64; 4] {
        let [x, x_dot, theta, theta_dot] = state;
        let (sin, cos) = theta.sin_cos();
        let temp = (force + POLEMASS_LENGTH * theta_dot * theta_dot * sin) / TOTAL_MASS;
        let theta_acc = (GRAVITY * sin - cos * temp)
            / (LENGTH * (4.0 / 3.0 - MASS_POLE * cos * cos / TOTAL_MASS));
        let x_acc = temp - POLEMASS_LENGTH * theta_acc * cos / TOTAL_MASS;
        [
            x + TAU * x_dot,
            x_dot + TAU * x_acc,
            theta + TAU * theta_dot,
            theta_dot + TAU * theta_acc,
        ]
    }

    fn observe(&self) -> Observation {
        Observation::Real(self.state.to_vec())
    }
}

impl Environment for CartPole {
    fn spec(&self) -> EnvSpec {
        EnvSpec {
            observation: ObservationSpace::Real { dim: 4 },
            action: ActionSpace::Discrete { n: 2 },
            reward_bound: 1.0,
            max_episode_steps: MAX_STEPS,
        }
    }

    fn reset(&mut self, seed: Option<u64>) -> Observation {
        if let Some(seed) = seed {
            self.rng = rng::stream(seed, 0);
        }
        for v in &mut self.state {
            *v = self.rng.random_range(-0.05..0.05);
        }
        self.elapsed = 0;
        self.observe()
    }

    fn set_rng(&mut self, rng: StreamRng) {
        self.rng = rng;
    }

    fn step(&mut self, action: &Action) -> Result<Transition> {
        self.spec().action.check(action)?;
        let force = if action.as_discrete() == Some(1) {
            FORCE_MAG
        } else {
            -FORCE_MAG
        };
        self.state = Self::integrate(self.state, force);
        self.elapsed += 1;
        let [x, _, theta, _] = self.state;
        let terminated = !(-X_THRESHOLD..=X_THRESHOLD).contains(&x)
            || !(-THETA_THRESHOLD..=THETA_THRESHOLD).contains(&theta);
        Ok(Transition {
            observation: self.observe(),
            reward: 1.0,
            terminated,
            truncated: !terminated && self.elapsed >= MAX_STEPS,
        })
    }
}
