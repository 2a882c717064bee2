//! Parametric policies, the value network, and checkpoints.

pub mod checkpoint;
pub mod mlp;
mod model;
mod value;

pub use checkpoint::Checkpoint;
pub use model::{ActionEval, HeadKind, InputEncoding, PolicyArch, PolicyModel, PolicyScratch, DEFAULT_HIDDEN};
pub use value::ValueNet;

/// Gradient accumulator aligned with a parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBuffer {
    grad: Vec<f64>,
    /// Number of accumulated contributions.
    pub count: usize,
}

impl GradientBuffer {
    pub fn new(len: usize) -> Self {
        Self {
            grad: vec![0.0; len],
            count: 0,
        }
    }

    pub fn clear(&mut self) {
        self.grad.fill(0.0);
        self.count = 0;
    }

    pub fn len(&self) -> usize {
        self.grad.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grad.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.grad
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.grad
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.grad
    }

    pub fn scale(&mut self, factor: f64) {
        self.grad.iter_mut().for_each(|g| *g *= factor);
    }
}
