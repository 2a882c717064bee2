//! Environments and the vectorized stepping harness.

mod cartpole;
mod cliffwalking;
mod pointmass;
pub mod tabular;
mod vector;

use std::fmt;
use std::path::Path;
use std::sync::Arc;

pub use cartpole::CartPole;
pub use cliffwalking::CliffWalking;
pub use pointmass::PointMass;
pub use tabular::{enumerate_trajectories, EnumeratedTrajectory, TabularEnv, TabularMdp};
pub use vector::{EpisodeStats, SlotStep, VectorizedEnv};

use crate::mdp::{Action, Observation};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ObservationSpace {
    Real { dim: usize },
    Discrete { n: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub enum ActionSpace {
    Discrete { n: usize },
    Real { low: Vec<f64>, high: Vec<f64> },
}

impl ActionSpace {
    pub fn check(&self, action: &Action) -> Result<()> {
        match (self, action) {
            (ActionSpace::Discrete { n }, Action::Discrete(a)) if a < n => Ok(()),
            (ActionSpace::Discrete { n }, Action::Discrete(a)) => Err(Error::invalid(format!(
                "action {a} out of range for {n} discrete actions"
            ))),
            (ActionSpace::Real { low, .. }, Action::Real(v)) if v.len() == low.len() => Ok(()),
            _ => Err(Error::invalid(format!(
                "action {action:?} incompatible with action space {self:?}"
            ))),
        }
    }
}

/// Static description of an environment.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvSpec {
    pub observation: ObservationSpace,
    pub action: ActionSpace,
    /// `r_max`: bound on the magnitude of any single reward.
    pub reward_bound: f64,
    pub max_episode_steps: usize,
}

/// Result of a single environment step.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub observation: Observation,
    pub reward: f64,
    pub terminated: bool,
    /// Set when the step limit is reached without termination.
    pub truncated: bool,
}

/// A single-agent episodic environment with its own random stream.
pub trait Environment: Send {
    fn spec(&self) -> EnvSpec;

    /// Starts a fresh episode. `Some(seed)` reseeds the internal generator first.
    fn reset(&mut self, seed: Option<u64>) -> Observation;

    /// Replaces the internal generator without resetting.
    fn set_rng(&mut self, rng: crate::rng::StreamRng);

    fn step(&mut self, action: &Action) -> Result<Transition>;
}

/// Environment selector, parsed from `cartpole`, `cliffwalking`, `pointmass` or
/// `tabular:<path>`.
#[derive(Debug, Clone)]
pub enum EnvId {
    CartPole,
    CliffWalking,
    PointMass,
    Tabular { path: String, mdp: Arc<TabularMdp> },
}

impl EnvId {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "cartpole" => Ok(EnvId::CartPole),
            "cliffwalking" => Ok(EnvId::CliffWalking),
            "pointmass" => Ok(EnvId::PointMass),
            other => match other.strip_prefix("tabular:") {
                Some(path) => {
                    let mdp = TabularMdp::load(Path::new(path))?;
                    Ok(EnvId::Tabular {
                        path: path.to_string(),
                        mdp: Arc::new(mdp),
                    })
                }
                None => Err(Error::config(format!(
                    "unknown environment {other:?} (expected cartpole, cliffwalking, pointmass or tabular:<path>)"
                ))),
            },
        }
    }

    pub fn make(&self) -> Box<dyn Environment> {
        match self {
            EnvId::CartPole => Box::new(CartPole::new()),
            EnvId::CliffWalking => Box::new(CliffWalking::new()),
            EnvId::PointMass => Box::new(PointMass::new()),
            EnvId::Tabular { mdp, .. } => Box::new(TabularEnv::new(mdp.clone())),
        }
    }

    pub fn spec(&self) -> EnvSpec {
        self.make().spec()
    }

    /// Name usable as a directory component.
    pub fn slug(&self) -> String {
        match self {
            EnvId::Tabular { path, .. } => {
                let stem = Path::new(path)
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| "mdp".into());
                format!("tabular-{stem}")
            }
            other => other.to_string(),
        }
    }
}

impl fmt::Display for EnvId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EnvId::CartPole => f.write_str("cartpole"),
            EnvId::CliffWalking => f.write_str("cliffwalking"),
            EnvId::PointMass => f.write_str("pointmass"),
            EnvId::Tabular { path, .. } => write!(f, "tabular:{path}"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng;

    fn random_action(spec: &EnvSpec, rng: &mut impl Rng) -> Action {
        match &spec.action {
            ActionSpace::Discrete { n } => Action::Discrete(rng.random_range(0..*n)),
            ActionSpace::Real { low, high } => Action::Real(
                low.iter()
                    .zip(high)
                    .map(|(l, h)| rng.random_range(*l..=*h))
                    .collect(),
            ),
        }
    }

    #[test]
    fn rewards_stay_within_bound() {
        for id in [EnvId::CartPole, EnvId::CliffWalking, EnvId::PointMass] {
            let mut env = id.make();
            let spec = env.spec();
            assert!(spec.reward_bound.is_finite() && spec.reward_bound > 0.0);
            let mut rng = rng::stream(7, 0);
            env.reset(Some(3));
            for _ in 0..100_000 {
                let tr = env.step(&random_action(&spec, &mut rng)).unwrap();
                assert!(tr.reward.abs() <= spec.reward_bound, "{id}: {}", tr.reward);
                if tr.terminated || tr.truncated {
                    env.reset(None);
                }
            }
        }
    }

    #[test]
    fn identical_seeds_identical_trajectories() {
        for id in [EnvId::CartPole, EnvId::CliffWalking, EnvId::PointMass] {
            let run = || {
                let mut env = id.make();
                let spec = env.spec();
                let mut rng = rng::stream(11, 0);
                let mut trace = vec![env.reset(Some(5))];
                for _ in 0..500 {
                    let tr = env.step(&random_action(&spec, &mut rng)).unwrap();
                    trace.push(tr.observation.clone());
                    if tr.terminated || tr.truncated {
                        trace.push(env.reset(None));
                    }
                }
                trace
            };
            assert_eq!(run(), run());
        }
    }

    #[test]
    fn env_id_parsing() {
        assert!(matches!(EnvId::parse("cartpole"), Ok(EnvId::CartPole)));
        assert!(matches!(EnvId::parse("cliffwalking"), Ok(EnvId::CliffWalking)));
        assert!(matches!(EnvId::parse("lunarlander"), Err(Error::Config(_))));
        assert!(EnvId::parse("tabular:/nonexistent/file.mdp").is_err());
    }

    #[test]
    fn action_space_checks() {
        let d = ActionSpace::Discrete { n: 2 };
        assert!(d.check(&Action::Discrete(1)).is_ok());
        assert!(matches!(d.check(&Action::Discrete(2)), Err(Error::InvalidInput(_))));
        assert!(d.check(&Action::Real(vec![0.0])).is_err());
    }
}
