use rand::Rng;

use super::mlp::{MlpCache, MlpLayout};
use super::model::InputEncoding;
use crate::mdp::Observation;
use crate::{Error, Result};

/// Scalar state-value network `V_phi(s)`, used only by PPO.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueNet {
    input: InputEncoding,
    hidden: Vec<usize>,
    layout: MlpLayout,
    phi: Vec<f64>,
}

impl ValueNet {
    pub fn new(input: InputEncoding, hidden: &[usize], rng: &mut impl Rng) -> Self {
        let mut net = Self::zeros(input, hidden);
        net.phi = net.layout.init(rng, std::f64::consts::SQRT_2, 1.0);
        net
    }

    pub fn zeros(input: InputEncoding, hidden: &[usize]) -> Self {
        let mut sizes = vec![input.width()];
        sizes.extend(hidden);
        sizes.push(1);
        let layout = MlpLayout::new(sizes);
        Self {
            input,
            hidden: hidden.to_vec(),
            phi: vec![0.0; layout.num_params()],
            layout,
        }
    }

    pub fn from_parts(input: InputEncoding, hidden: &[usize], phi: Vec<f64>) -> Result<Self> {
        let mut net = Self::zeros(input, hidden);
        if phi.len() != net.phi.len() {
            return Err(Error::invalid(format!(
                "value network needs {} parameters, got {}",
                net.phi.len(),
                phi.len()
            )));
        }
        net.phi = phi;
        Ok(net)
    }

    pub fn input(&self) -> InputEncoding {
        self.input
    }

    pub fn hidden(&self) -> &[usize] {
        &self.hidden
    }

    pub fn phi(&self) -> &[f64] {
        &self.phi
    }

    pub fn phi_mut(&mut self) -> &mut [f64] {
        &mut self.phi
    }

    pub fn num_params(&self) -> usize {
        self.phi.len()
    }

    pub fn cache(&self) -> MlpCache {
        self.layout.cache()
    }

    /// `V_phi(obs)`; the cache is left ready for [`backward`](Self::backward).
    pub fn forward(&self, obs: &Observation, cache: &mut MlpCache) -> Result<f64> {
        self.input.forward(&self.layout, &self.phi, obs, cache)?;
        Ok(cache.output()[0])
    }

    pub fn value(&self, obs: &Observation) -> Result<f64> {
        self.forward(obs, &mut self.cache())
    }

    /// Adds `d_value * grad(V_phi)` into `grad`.
    pub fn backward(&self, cache: &mut MlpCache, d_value: f64, grad: &mut [f64]) {
        assert_eq!(grad.len(), self.phi.len(), "gradient buffer misaligned");
        self.layout.backward(&self.phi, cache, &[d_value], grad);
    }
}
