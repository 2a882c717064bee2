/// Adam moments for a flat parameter vector (policy parameters, then value parameters).
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            step: 0,
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamParams {
    pub lr: f64,
    pub betas: (f64, f64),
    pub eps: f64,
}

/// One bias-corrected Adam step, descending along `grads`.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, hp: AdamParams) {
    adam_step_parts(&mut [(params, grads)], state, hp);
}

/// Adam step over several parameter blocks sharing one state, laid out in order.
pub fn adam_step_parts(parts: &mut [(&mut [f64], &[f64])], state: &mut AdamState, hp: AdamParams) {
    let total: usize = parts.iter().map(|(p, _)| p.len()).sum();
    assert_eq!(total, state.len(), "optimizer state misaligned with parameters");
    state.step += 1;
    let (b1, b2) = hp.betas;
    let c1 = 1.0 - b1.powi(state.step as i32);
    let c2 = 1.0 - b2.powi(state.step as i32);
    let mut offset = 0;
    for (params, grads) in parts.iter_mut() {
        assert_eq!(params.len(), grads.len(), "gradient misaligned with parameters");
        let m = &mut state.m[offset..offset + params.len()];
        let v = &mut state.v[offset..offset + params.len()];
        for i in 0..params.len() {
            let g = grads[i];
            m[i] = b1 * m[i] + (1.0 - b1) * g;
            v[i] = b2 * v[i] + (1.0 - b2) * g * g;
            params[i] -= hp.lr * (m[i] / c1) / ((v[i] / c2).sqrt() + hp.eps);
        }
        offset += params.len();
    }
}

/// Global L2 norm across blocks.
pub fn global_norm(blocks: &[&[f64]]) -> f64 {
    blocks
        .iter()
        .flat_map(|b| b.iter())
        .map(|g| g * g)
        .sum::<f64>()
        .sqrt()
}

/// Rescales the blocks so their joint norm is at most `max_norm`; returns the norm
/// before clipping.
pub fn clip_grad_norm(blocks: &mut [&mut [f64]], max_norm: f64) -> f64 {
    let norm = global_norm(&blocks.iter().map(|b| &**b).collect::<Vec<_>>());
    if norm > max_norm {
        let scale = max_norm / norm;
        for b in blocks.iter_mut() {
            for g in b.iter_mut() {
                *g *= scale;
            }
        }
    }
    norm
}
