use rand::Rng;
use rand_distr::StandardNormal;

use super::mlp::{MlpCache, MlpLayout};
use super::GradientBuffer;
use crate::env::{ActionSpace, EnvSpec, ObservationSpace};
use crate::mdp::{Action, Observation};
use crate::{Error, Result};

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// How observations are fed to a network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputEncoding {
    Real { dim: usize },
    OneHot { n: usize },
}

impl InputEncoding {
    pub fn for_space(space: ObservationSpace) -> Self {
        match space {
            ObservationSpace::Real { dim } => InputEncoding::Real { dim },
            ObservationSpace::Discrete { n } => InputEncoding::OneHot { n },
        }
    }

    pub fn width(&self) -> usize {
        match *self {
            InputEncoding::Real { dim } => dim,
            InputEncoding::OneHot { n } => n,
        }
    }

    pub(crate) fn forward(
        &self,
        layout: &MlpLayout,
        params: &[f64],
        obs: &Observation,
        cache: &mut MlpCache,
    ) -> Result<()> {
        match (self, obs) {
            (InputEncoding::Real { dim }, Observation::Real(x)) if x.len() == *dim => {
                layout.forward(params, x, cache)
            }
            (InputEncoding::OneHot { n }, Observation::Discrete(s)) if s < n => {
                layout.forward_one_hot(params, *s, cache)
            }
            _ => {
                return Err(Error::invalid(format!(
                    "observation {obs:?} incompatible with input encoding {self:?}"
                )))
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadKind {
    /// Softmax over `actions` logits.
    Categorical { actions: usize },
    /// Diagonal Gaussian with state-independent log-std parameters.
    Gaussian { dim: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PolicyArch {
    Mlp {
        input: InputEncoding,
        hidden: Vec<usize>,
        head: HeadKind,
    },
    /// Softmax over logits `theta[s * actions + a]`.
    Tabular { states: usize, actions: usize },
}

/// A stochastic policy `pi_theta(a|s)` with a flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyModel {
    arch: PolicyArch,
    layout: Option<MlpLayout>,
    theta: Vec<f64>,
}

/// Reusable buffers for evaluating and differentiating one `(s, a)` pair.
#[derive(Debug, Clone, Default)]
pub struct PolicyScratch {
    mlp: MlpCache,
    probs: Vec<f64>,
    d_out: Vec<f64>,
    state: usize,
    action: Vec<f64>,
    discrete_action: usize,
}

/// `log pi(a|s)` and the entropy of `pi(.|s)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActionEval {
    pub log_prob: f64,
    pub entropy: f64,
}

/// Default hidden layer sizes.
pub const DEFAULT_HIDDEN: [usize; 2] = [64, 64];

impl PolicyModel {
    /// MLP policy matching an environment's spaces, orthogonally initialised.
    pub fn for_env(spec: &EnvSpec, hidden: &[usize], rng: &mut impl Rng) -> Self {
        let input = InputEncoding::for_space(spec.observation);
        let head = match &spec.action {
            ActionSpace::Discrete { n } => HeadKind::Categorical { actions: *n },
            ActionSpace::Real { low, .. } => HeadKind::Gaussian { dim: low.len() },
        };
        let arch = PolicyArch::Mlp {
            input,
            hidden: hidden.to_vec(),
            head,
        };
        let mut model = Self::zeros(arch);
        if let Some(layout) = &model.layout {
            let init = layout.init(rng, std::f64::consts::SQRT_2, 0.01);
            model.theta[..init.len()].copy_from_slice(&init);
        }
        model
    }

    /// Tabular softmax policy with all logits zero (uniform).
    pub fn tabular(states: usize, actions: usize) -> Self {
        Self::zeros(PolicyArch::Tabular { states, actions })
    }

    pub fn tabular_with_logits(states: usize, actions: usize, logits: Vec<f64>) -> Result<Self> {
        Self::from_parts(PolicyArch::Tabular { states, actions }, logits)
    }

    /// All-zero parameters for an architecture.
    pub fn zeros(arch: PolicyArch) -> Self {
        let layout = Self::layout_for(&arch);
        let n = Self::param_count(&arch, layout.as_ref());
        Self {
            arch,
            layout,
            theta: vec![0.0; n],
        }
    }

    pub fn from_parts(arch: PolicyArch, theta: Vec<f64>) -> Result<Self> {
        let layout = Self::layout_for(&arch);
        let n = Self::param_count(&arch, layout.as_ref());
        if theta.len() != n {
            return Err(Error::invalid(format!(
                "architecture needs {n} parameters, got {}",
                theta.len()
            )));
        }
        Ok(Self { arch, layout, theta })
    }

    fn layout_for(arch: &PolicyArch) -> Option<MlpLayout> {
        match arch {
            PolicyArch::Mlp { input, hidden, head } => {
                let out = match head {
                    HeadKind::Categorical { actions } => *actions,
                    HeadKind::Gaussian { dim } => *dim,
                };
                let mut sizes = vec![input.width()];
                sizes.extend(hidden);
                sizes.push(out);
                Some(MlpLayout::new(sizes))
            }
            PolicyArch::Tabular { .. } => None,
        }
    }

    fn param_count(arch: &PolicyArch, layout: Option<&MlpLayout>) -> usize {
        match arch {
            PolicyArch::Mlp { head, .. } => {
                let extra = match head {
                    HeadKind::Gaussian { dim } => *dim,
                    HeadKind::Categorical { .. } => 0,
                };
                layout.map_or(0, MlpLayout::num_params) + extra
            }
            PolicyArch::Tabular { states, actions } => states * actions,
        }
    }

    pub fn arch(&self) -> &PolicyArch {
        &self.arch
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn theta_mut(&mut self) -> &mut [f64] {
        &mut self.theta
    }

    pub fn num_params(&self) -> usize {
        self.theta.len()
    }

    pub fn gradient_buffer(&self) -> GradientBuffer {
        GradientBuffer::new(self.theta.len())
    }

    pub fn scratch(&self) -> PolicyScratch {
        PolicyScratch {
            mlp: self.layout.as_ref().map(MlpLayout::cache).unwrap_or_default(),
            ..Default::default()
        }
    }

    /// Checks that the policy can act on an environment.
    pub fn check_compatible(&self, spec: &EnvSpec) -> Result<()> {
        let ok = match (&self.arch, spec.observation, &spec.action) {
            (PolicyArch::Mlp { input, head, .. }, obs, act) => {
                *input == InputEncoding::for_space(obs)
                    && match (head, act) {
                        (HeadKind::Categorical { actions }, ActionSpace::Discrete { n }) => actions == n,
                        (HeadKind::Gaussian { dim }, ActionSpace::Real { low, .. }) => *dim == low.len(),
                        _ => false,
                    }
            }
            (
                PolicyArch::Tabular { states, actions },
                ObservationSpace::Discrete { n },
                ActionSpace::Discrete { n: a },
            ) => states == &n && actions == a,
            _ => false,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Load(format!(
                "policy architecture {:?} does not fit environment spaces (expected observation {:?}, action {:?})",
                self.arch, spec.observation, spec.action
            )))
        }
    }

    /// Computes the distribution parameters for `obs` into the scratch. For categorical
    /// and tabular heads `scratch.probs` holds the softmax; for Gaussian heads the
    /// network output (the mean) is left in the mlp cache.
    fn distribution(&self, obs: &Observation, scratch: &mut PolicyScratch) -> Result<()> {
        match &self.arch {
            PolicyArch::Tabular { states, actions } => {
                let s = obs
                    .as_discrete()
                    .filter(|s| s < states)
                    .ok_or_else(|| Error::invalid(format!("tabular policy cannot read {obs:?}")))?;
                scratch.state = s;
                softmax_into(&self.theta[s * actions..(s + 1) * actions], &mut scratch.probs);
            }
            PolicyArch::Mlp { input, head, .. } => {
                let layout = self.layout.as_ref().expect("mlp layout");
                input.forward(layout, &self.theta[..layout.num_params()], obs, &mut scratch.mlp)?;
                if let HeadKind::Categorical { .. } = head {
                    softmax_into(scratch.mlp.output(), &mut scratch.probs);
                }
            }
        }
        Ok(())
    }

    fn log_std(&self) -> &[f64] {
        match &self.arch {
            PolicyArch::Mlp {
                head: HeadKind::Gaussian { dim },
                ..
            } => &self.theta[self.theta.len() - dim..],
            _ => &[],
        }
    }

    fn is_gaussian(&self) -> bool {
        matches!(
            self.arch,
            PolicyArch::Mlp {
                head: HeadKind::Gaussian { .. },
                ..
            }
        )
    }

    /// Log-probability and entropy at `(obs, action)`; leaves everything needed by
    /// [`backward`](Self::backward) in the scratch.
    pub fn evaluate(&self, obs: &Observation, action: &Action, scratch: &mut PolicyScratch) -> Result<ActionEval> {
        self.distribution(obs, scratch)?;
        if self.is_gaussian() {
            let a = action
                .as_real()
                .ok_or_else(|| Error::invalid("gaussian policy needs a real action"))?;
            let mean = scratch.mlp.output();
            if a.len() != mean.len() {
                return Err(Error::invalid("action dimension mismatch"));
            }
            let log_std = self.log_std();
            let mut log_prob = 0.0;
            let mut entropy = 0.0;
            for i in 0..a.len() {
                let z = (a[i] - mean[i]) * (-log_std[i]).exp();
                log_prob += -0.5 * z * z - log_std[i] - HALF_LN_2PI;
                entropy += log_std[i] + HALF_LN_2PI + 0.5;
            }
            scratch.action.clear();
            scratch.action.extend_from_slice(a);
            Ok(ActionEval { log_prob, entropy })
        } else {
            let a = action
                .as_discrete()
                .filter(|a| *a < scratch.probs.len())
                .ok_or_else(|| Error::invalid(format!("invalid discrete action {action:?}")))?;
            scratch.discrete_action = a;
            let p = &scratch.probs;
            let entropy = -p.iter().filter(|v| **v > 0.0).map(|v| v * v.ln()).sum::<f64>();
            Ok(ActionEval {
                log_prob: p[a].ln(),
                entropy,
            })
        }
    }

    /// Adds `d_log_prob * grad(log pi) + d_entropy * grad(H)` into `grad`, for the pair
    /// last passed to [`evaluate`](Self::evaluate).
    pub fn backward(&self, scratch: &mut PolicyScratch, d_log_prob: f64, d_entropy: f64, grad: &mut [f64]) {
        assert_eq!(grad.len(), self.theta.len(), "gradient buffer misaligned");
        match &self.arch {
            PolicyArch::Tabular { actions, .. } => {
                let base = scratch.state * actions;
                categorical_d_logits(scratch, d_log_prob, d_entropy);
                for (g, d) in grad[base..base + actions].iter_mut().zip(&scratch.d_out) {
                    *g += d;
                }
            }
            PolicyArch::Mlp { head, .. } => {
                let layout = self.layout.as_ref().expect("mlp layout");
                let n = layout.num_params();
                match head {
                    HeadKind::Categorical { .. } => categorical_d_logits(scratch, d_log_prob, d_entropy),
                    HeadKind::Gaussian { dim } => {
                        let log_std = self.log_std();
                        let mean = scratch.mlp.output();
                        scratch.d_out.clear();
                        for i in 0..*dim {
                            let inv_var = (-2.0 * log_std[i]).exp();
                            let diff = scratch.action[i] - mean[i];
                            scratch.d_out.push(d_log_prob * diff * inv_var);
                            grad[n + i] += d_log_prob * (diff * diff * inv_var - 1.0) + d_entropy;
                        }
                    }
                }
                let d_out = std::mem::take(&mut scratch.d_out);
                layout.backward(&self.theta[..n], &mut scratch.mlp, &d_out, &mut grad[..n]);
                scratch.d_out = d_out;
            }
        }
    }

    pub fn log_prob(&self, obs: &Observation, action: &Action) -> Result<f64> {
        Ok(self.evaluate(obs, action, &mut self.scratch())?.log_prob)
    }

    pub fn entropy(&self, obs: &Observation) -> Result<f64> {
        let mut scratch = self.scratch();
        let action = if self.is_gaussian() {
            self.distribution(obs, &mut scratch)?;
            Action::Real(scratch.mlp.output().to_vec())
        } else {
            Action::Discrete(0)
        };
        Ok(self.evaluate(obs, &action, &mut scratch)?.entropy)
    }

    /// Accumulates `grad(log pi(action | obs))` into `out`.
    pub fn grad_log_prob(&self, obs: &Observation, action: &Action, out: &mut GradientBuffer) -> Result<()> {
        let mut scratch = self.scratch();
        self.evaluate(obs, action, &mut scratch)?;
        self.backward(&mut scratch, 1.0, 0.0, out.as_mut_slice());
        out.count += 1;
        Ok(())
    }

    /// Action probabilities for discrete heads.
    pub fn action_probs(&self, obs: &Observation) -> Result<Vec<f64>> {
        if self.is_gaussian() {
            return Err(Error::invalid("gaussian policy has no action probabilities"));
        }
        let mut scratch = self.scratch();
        self.distribution(obs, &mut scratch)?;
        Ok(scratch.probs)
    }

    /// Mean action of a Gaussian head.
    pub fn gaussian_mean(&self, obs: &Observation) -> Result<Vec<f64>> {
        if !self.is_gaussian() {
            return Err(Error::invalid("policy head is not gaussian"));
        }
        let mut scratch = self.scratch();
        self.distribution(obs, &mut scratch)?;
        Ok(scratch.mlp.output().to_vec())
    }

    /// Samples an action and returns it with its log-probability.
    pub fn sample_action(&self, obs: &Observation, rng: &mut impl Rng) -> Result<(Action, f64)> {
        self.sample_with(obs, rng, &mut self.scratch())
    }

    pub fn sample_with(&self, obs: &Observation, rng: &mut impl Rng, scratch: &mut PolicyScratch) -> Result<(Action, f64)> {
        self.distribution(obs, scratch)?;
        let action = if self.is_gaussian() {
            let mean = scratch.mlp.output();
            let a = mean
                .iter()
                .zip(self.log_std())
                .map(|(m, ls)| m + ls.exp() * rng.sample::<f64, _>(StandardNormal))
                .collect();
            Action::Real(a)
        } else {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut pick = scratch.probs.len() - 1;
            for (i, p) in scratch.probs.iter().enumerate() {
                acc += p;
                if u < acc {
                    pick = i;
                    break;
                }
            }
            Action::Discrete(pick)
        };
        let eval = self.evaluate(obs, &action, scratch)?;
        Ok((action, eval.log_prob))
    }
}

fn softmax_into(logits: &[f64], out: &mut Vec<f64>) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    out.clear();
    out.extend(logits.iter().map(|z| (z - max).exp()));
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= total);
}

/// d/dz of `d_log_prob * log p_a + d_entropy * H` for a softmax over logits `z`:
/// `d_log_prob * (1{j=a} - p_j) - d_entropy * p_j * (log p_j + H)`.
fn categorical_d_logits(scratch: &mut PolicyScratch, d_log_prob: f64, d_entropy: f64) {
    let p = &scratch.probs;
    let h = if d_entropy != 0.0 {
        -p.iter().filter(|v| **v > 0.0).map(|v| v * v.ln()).sum::<f64>()
    } else {
        0.0
    };
    scratch.d_out.clear();
    for (j, pj) in p.iter().enumerate() {
        let hit = if j == scratch.discrete_action { 1.0 } else { 0.0 };
        let mut d = d_log_prob * (hit - pj);
        if d_entropy != 0.0 && *pj > 0.0 {
            d -= d_entropy * pj * (pj.ln() + h);
        }
        scratch.d_out.push(d);
    }
}
