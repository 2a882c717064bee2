//! Critic-free policy-gradient training.
//!
//! The crate is organised bottom-up:
//!
//! - [`mdp`]: step records, episode segments, rollout groups and discounted returns.
//! - [`env`]: CartPole, CliffWalking, PointMass and tabular MDPs plus a vectorized
//!   stepping harness with autoreset.
//! - [`policy`]: MLP and tabular softmax policies with hand-written reverse-mode
//!   gradients, a scalar value network, and the checkpoint container.
//! - [`advantage`]: group (bin) baselines, outcome normalisation, truncated GAE.
//! - [`trainer`]: clipped surrogate, Adam, and the iteration loop.
//! - [`oracle`]: exact policy gradients on small tabular MDPs by enumeration and the
//!   consistency experiments built on top of them.

pub mod advantage;
pub mod env;
mod error;
pub mod mdp;
pub mod oracle;
pub mod policy;
pub mod rng;
pub mod trainer;

pub use advantage::{BinKey, BinTable, BinningConfig};
pub use env::{EnvId, EnvSpec, Environment, TabularMdp, VectorizedEnv};
pub use error::{Error, Result};
pub use mdp::{Action, EpisodeSegment, Observation, RolloutGroup, StepRecord};
pub use policy::{GradientBuffer, PolicyModel, ValueNet};
pub use trainer::{Algorithm, IterationMetrics, TrainConfig, Trainer};
