use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::advantage::BinningConfig;
use crate::policy::DEFAULT_HIDDEN;
use crate::{Error, Result};

/// Which advantage path the trainer uses.
#[derive(Debug, Clone, PartialEq)]
pub enum Algorithm {
    /// Group bin baselines; no value network.
    Gpg(BinningConfig),
    /// Truncated GAE with a learned value network.
    Ppo,
    /// Every step of a segment gets the group-normalised undiscounted segment return.
    GrpoOutcome,
}

impl Algorithm {
    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::Gpg(_) => "gpg",
            Algorithm::Ppo => "ppo",
            Algorithm::GrpoOutcome => "grpo",
        }
    }

    /// File-system friendly name, e.g. `gpg-spatialtime-0.2`.
    pub fn slug(&self) -> String {
        match self {
            Algorithm::Gpg(b) => format!("gpg-{}", b.to_string().replace(':', "-")),
            other => other.name().to_string(),
        }
    }

    pub fn uses_value_net(&self) -> bool {
        matches!(self, Algorithm::Ppo)
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Algorithm::Gpg(b) => write!(f, "gpg[{b}]"),
            other => f.write_str(other.name()),
        }
    }
}

/// Training hyperparameters.
///
/// Defaults follow the usual PPO settings: lr 2.5e-4, clip 0.2, 4 epochs of 4
/// minibatches, gamma 0.99, lambda 0.95, entropy 0.01, value 0.5, grad-norm 0.5,
/// 128-step rollouts, Adam eps 1e-5, linear learning-rate decay.
///
/// The text form is one `key = value` per line with `#` comments; the keys are the
/// field names, except that `algorithm` (`gpg`, `ppo`, `grpo`) and `binning` together
/// encode [`Algorithm`], `adam_betas` is written `b1,b2` and `hidden` is a comma list.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub algorithm: Algorithm,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip_eps: f64,
    pub learning_rate: f64,
    /// Linearly decay the learning rate to 0 over `iterations`.
    pub anneal_lr: bool,
    pub adam_betas: (f64, f64),
    pub adam_eps: f64,
    pub update_epochs: usize,
    pub num_minibatches: usize,
    pub num_envs: usize,
    pub rollout_length: usize,
    pub iterations: usize,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub max_grad_norm: f64,
    /// Standardise advantages within each minibatch.
    pub normalize_adv: bool,
    /// Leave-one-out bin means for the group baseline.
    pub loo_baseline: bool,
    /// Drop steps of segments cut by the rollout boundary from the update.
    pub exclude_truncated_from_update: bool,
    pub hidden: Vec<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::Gpg(BinningConfig::Time),
            gamma: 0.99,
            gae_lambda: 0.95,
            clip_eps: 0.2,
            learning_rate: 2.5e-4,
            anneal_lr: true,
            adam_betas: (0.9, 0.999),
            adam_eps: 1e-5,
            update_epochs: 4,
            num_minibatches: 4,
            num_envs: 16,
            rollout_length: 128,
            iterations: 200,
            entropy_coef: 0.01,
            value_coef: 0.5,
            max_grad_norm: 0.5,
            normalize_adv: true,
            loo_baseline: false,
            exclude_truncated_from_update: false,
            hidden: DEFAULT_HIDDEN.to_vec(),
            seed: 1,
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::config(format!("{key}: cannot parse {value:?}")))
}

impl TrainConfig {
    /// Every key accepted by [`set`](Self::set).
    pub const KEYS: &'static [&'static str] = &[
        "algorithm",
        "binning",
        "gamma",
        "gae_lambda",
        "clip_eps",
        "learning_rate",
        "anneal_lr",
        "adam_betas",
        "adam_eps",
        "update_epochs",
        "num_minibatches",
        "num_envs",
        "rollout_length",
        "iterations",
        "entropy_coef",
        "value_coef",
        "max_grad_norm",
        "normalize_adv",
        "loo_baseline",
        "exclude_truncated_from_update",
        "hidden",
        "seed",
    ];

    /// Applies one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key.trim() {
            "algorithm" => {
                self.algorithm = match value {
                    "gpg" => match &self.algorithm {
                        Algorithm::Gpg(b) => Algorithm::Gpg(b.clone()),
                        _ => Algorithm::Gpg(BinningConfig::Time),
                    },
                    "ppo" => Algorithm::Ppo,
                    "grpo" => Algorithm::GrpoOutcome,
                    other => {
                        return Err(Error::config(format!(
                            "algorithm: unknown value {other:?} (expected gpg, ppo or grpo)"
                        )))
                    }
                }
            }
            "binning" => {
                let b: BinningConfig = value
                    .parse()
                    .map_err(|e| Error::config(format!("binning: {e}")))?;
                if let Algorithm::Gpg(current) = &mut self.algorithm {
                    *current = b;
                } else {
                    return Err(Error::config(format!(
                        "binning: only meaningful with algorithm = gpg, not {}",
                        self.algorithm.name()
                    )));
                }
            }
            "gamma" => self.gamma = parse_value("gamma", value)?,
            "gae_lambda" => self.gae_lambda = parse_value("gae_lambda", value)?,
            "clip_eps" => self.clip_eps = parse_value("clip_eps", value)?,
            "learning_rate" => self.learning_rate = parse_value("learning_rate", value)?,
            "anneal_lr" => self.anneal_lr = parse_value("anneal_lr", value)?,
            "adam_betas" => {
                let (a, b) = value
                    .split_once(',')
                    .ok_or_else(|| Error::config(format!("adam_betas: expected b1,b2, got {value:?}")))?;
                self.adam_betas = (parse_value("adam_betas", a.trim())?, parse_value("adam_betas", b.trim())?);
            }
            "adam_eps" => self.adam_eps = parse_value("adam_eps", value)?,
            "update_epochs" => self.update_epochs = parse_value("update_epochs", value)?,
            "num_minibatches" => self.num_minibatches = parse_value("num_minibatches", value)?,
            "num_envs" => self.num_envs = parse_value("num_envs", value)?,
            "rollout_length" => self.rollout_length = parse_value("rollout_length", value)?,
            "iterations" => self.iterations = parse_value("iterations", value)?,
            "entropy_coef" => self.entropy_coef = parse_value("entropy_coef", value)?,
            "value_coef" => self.value_coef = parse_value("value_coef", value)?,
            "max_grad_norm" => self.max_grad_norm = parse_value("max_grad_norm", value)?,
            "normalize_adv" => self.normalize_adv = parse_value("normalize_adv", value)?,
            "loo_baseline" => self.loo_baseline = parse_value("loo_baseline", value)?,
            "exclude_truncated_from_update" => {
                self.exclude_truncated_from_update = parse_value("exclude_truncated_from_update", value)?
            }
            "hidden" => {
                self.hidden = if value.is_empty() {
                    Vec::new()
                } else {
                    value
                        .split(',')
                        .map(|h| parse_value("hidden", h.trim()))
                        .collect::<Result<_>>()?
                }
            }
            "seed" => self.seed = parse_value("seed", value)?,
            other => return Err(Error::config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Parses the text form on top of the defaults and validates the result.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies every assignment in `text`, in order, without validating.
    ///
    /// `algorithm` lines are applied before `binning` lines regardless of order.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        let mut pairs = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("line {}: expected key = value", n + 1)))?;
            pairs.push((k.trim(), v.trim()));
        }
        pairs.sort_by_key(|(k, _)| *k != "algorithm");
        for (k, v) in pairs {
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("algorithm = {}\n", self.algorithm.name());
        if let Algorithm::Gpg(b) = &self.algorithm {
            out += &format!("binning = {b}\n");
        }
        let hidden: Vec<String> = self.hidden.iter().map(|h| h.to_string()).collect();
        for (k, v) in [
            ("gamma", self.gamma.to_string()),
            ("gae_lambda", self.gae_lambda.to_string()),
            ("clip_eps", self.clip_eps.to_string()),
            ("learning_rate", self.learning_rate.to_string()),
            ("anneal_lr", self.anneal_lr.to_string()),
            ("adam_betas", format!("{},{}", self.adam_betas.0, self.adam_betas.1)),
            ("adam_eps", self.adam_eps.to_string()),
            ("update_epochs", self.update_epochs.to_string()),
            ("num_minibatches", self.num_minibatches.to_string()),
            ("num_envs", self.num_envs.to_string()),
            ("rollout_length", self.rollout_length.to_string()),
            ("iterations", self.iterations.to_string()),
            ("entropy_coef", self.entropy_coef.to_string()),
            ("value_coef", self.value_coef.to_string()),
            ("max_grad_norm", self.max_grad_norm.to_string()),
            ("normalize_adv", self.normalize_adv.to_string()),
            ("loo_baseline", self.loo_baseline.to_string()),
            ("exclude_truncated_from_update", self.exclude_truncated_from_update.to_string()),
            ("hidden", hidden.join(",")),
            ("seed", self.seed.to_string()),
        ] {
            out += &format!("{k} = {v}\n");
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::config(msg));
        if !(self.clip_eps > 0.0) {
            return bad(format!("clip_eps must be positive, got {}", self.clip_eps));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad(format!("gamma must lie in [0, 1], got {}", self.gamma));
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad(format!("gae_lambda must lie in [0, 1], got {}", self.gae_lambda));
        }
        for (k, v) in [
            ("update_epochs", self.update_epochs),
            ("num_minibatches", self.num_minibatches),
            ("num_envs", self.num_envs),
            ("rollout_length", self.rollout_length),
        ] {
            if v == 0 {
                return bad(format!("{k} must be positive"));
            }
        }
        if self.hidden.contains(&0) {
            return bad("hidden layer widths must be positive".into());
        }
        for (k, v) in [
            ("learning_rate", self.learning_rate),
            ("adam_eps", self.adam_eps),
            ("entropy_coef", self.entropy_coef),
            ("value_coef", self.value_coef),
            ("max_grad_norm", self.max_grad_norm),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{k} must be finite and non-negative, got {v}"));
            }
        }
        let (b1, b2) = self.adam_betas;
        if !((0.0..1.0).contains(&b1) && (0.0..1.0).contains(&b2)) {
            return bad(format!("adam_betas must lie in [0, 1), got {b1},{b2}"));
        }
        if let Algorithm::Gpg(BinningConfig::Spatial { eps } | BinningConfig::SpatialTime { eps }) = &self.algorithm {
            if !(*eps > 0.0) {
                return bad(format!("binning eps must be positive, got {eps}"));
            }
        }
        Ok(())
    }
}
