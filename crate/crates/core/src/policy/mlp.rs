//! Dense tanh networks over a flat parameter slice.
//!
//! Layer `l` maps `sizes[l]` inputs to `sizes[l + 1]` outputs. Its weights are stored
//! row-major (`out x in`) followed by its `out` biases. Hidden layers apply `tanh`; the
//! last layer is linear.

use rand::Rng;
use rand_distr::StandardNormal;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlpLayout {
    sizes: Vec<usize>,
    offsets: Vec<usize>,
    num_params: usize,
}

/// Activations kept from the forward pass, plus backprop work space.
#[derive(Debug, Clone, Default)]
pub struct MlpCache {
    /// `acts[0]` is the input, `acts[l + 1]` the output of layer `l`.
    acts: Vec<Vec<f64>>,
    delta: Vec<f64>,
    delta_prev: Vec<f64>,
}

impl MlpCache {
    pub fn output(&self) -> &[f64] {
        self.acts.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

impl MlpLayout {
    pub fn new(sizes: Vec<usize>) -> Self {
        assert!(sizes.len() >= 2, "an mlp needs input and output sizes");
        assert!(sizes.iter().all(|s| *s > 0), "layer sizes must be positive");
        let mut offsets = Vec::with_capacity(sizes.len() - 1);
        let mut n = 0;
        for w in sizes.windows(2) {
            offsets.push(n);
            n += w[0] * w[1] + w[1];
        }
        Self {
            sizes,
            offsets,
            num_params: n,
        }
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().expect("nonempty sizes")
    }

    pub fn num_params(&self) -> usize {
        self.num_params
    }

    fn num_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn cache(&self) -> MlpCache {
        let max = *self.sizes.iter().max().expect("nonempty sizes");
        MlpCache {
            acts: self.sizes.iter().map(|s| vec![0.0; *s]).collect(),
            delta: vec![0.0; max],
            delta_prev: vec![0.0; max],
        }
    }

    /// Orthogonal initialisation: hidden layers with gain `hidden_gain`, the output layer
    /// with `output_gain`, zero biases.
    pub fn init(&self, rng: &mut impl Rng, hidden_gain: f64, output_gain: f64) -> Vec<f64> {
        let mut params = vec![0.0; self.num_params];
        for l in 0..self.num_layers() {
            let (inp, out) = (self.sizes[l], self.sizes[l + 1]);
            let gain = if l + 1 == self.num_layers() {
                output_gain
            } else {
                hidden_gain
            };
            let w = orthogonal(out, inp, rng);
            let off = self.offsets[l];
            for (dst, src) in params[off..off + out * inp].iter_mut().zip(w) {
                *dst = gain * src;
            }
        }
        params
    }

    /// Forward pass; the output is left in `cache.output()`.
    pub fn forward(&self, params: &[f64], input: &[f64], cache: &mut MlpCache) {
        debug_assert_eq!(params.len(), self.num_params);
        assert_eq!(input.len(), self.input_dim(), "mlp input dimension");
        cache.acts[0].copy_from_slice(input);
        self.propagate(params, cache);
    }

    /// Forward pass for an input that is one-hot at `index`.
    pub fn forward_one_hot(&self, params: &[f64], index: usize, cache: &mut MlpCache) {
        assert!(index < self.input_dim(), "one-hot index out of range");
        cache.acts[0].fill(0.0);
        cache.acts[0][index] = 1.0;
        self.propagate(params, cache);
    }

    fn propagate(&self, params: &[f64], cache: &mut MlpCache) {
        let last = self.num_layers() - 1;
        for l in 0..=last {
            let (inp, out) = (self.sizes[l], self.sizes[l + 1]);
            let off = self.offsets[l];
            let weights = &params[off..off + out * inp];
            let bias = &params[off + out * inp..off + out * inp + out];
            let (prev, next) = cache.acts.split_at_mut(l + 1);
            let x = &prev[l];
            let y = &mut next[0];
            for o in 0..out {
                let row = &weights[o * inp..(o + 1) * inp];
                let z = bias[o] + dot(row, x);
                y[o] = if l == last { z } else { z.tanh() };
            }
        }
    }

    /// Backpropagates `d_output` (gradient of some scalar w.r.t. the network output)
    /// and adds the parameter gradient into `grad`.
    ///
    /// Must follow a [`forward`](Self::forward) with the same `params` and `cache`.
    pub fn backward(&self, params: &[f64], cache: &mut MlpCache, d_output: &[f64], grad: &mut [f64]) {
        debug_assert_eq!(grad.len(), self.num_params);
        let last = self.num_layers() - 1;
        let MlpCache {
            acts,
            delta,
            delta_prev,
        } = cache;
        delta[..d_output.len()].copy_from_slice(d_output);
        for l in (0..=last).rev() {
            let (inp, out) = (self.sizes[l], self.sizes[l + 1]);
            let off = self.offsets[l];
            if l != last {
                // Through tanh: d/dz = (1 - y^2).
                for o in 0..out {
                    let y = acts[l + 1][o];
                    delta[o] *= 1.0 - y * y;
                }
            }
            let x = &acts[l];
            let (gw, gb) = grad[off..off + out * inp + out].split_at_mut(out * inp);
            for o in 0..out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                gb[o] += d;
                for (g, xi) in gw[o * inp..(o + 1) * inp].iter_mut().zip(x.iter()) {
                    *g += d * xi;
                }
            }
            if l > 0 {
                let weights = &params[off..off + out * inp];
                delta_prev[..inp].fill(0.0);
                for o in 0..out {
                    let d = delta[o];
                    if d == 0.0 {
                        continue;
                    }
                    for (dp, w) in delta_prev[..inp].iter_mut().zip(&weights[o * inp..(o + 1) * inp]) {
                        *dp += d * w;
                    }
                }
                std::mem::swap(delta, delta_prev);
            }
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Row-major `rows x cols` matrix with orthonormal rows (if `rows <= cols`) or columns.
fn orthogonal(rows: usize, cols: usize, rng: &mut impl Rng) -> Vec<f64> {
    let (n, len) = if rows <= cols { (rows, cols) } else { (cols, rows) };
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(n);
    while basis.len() < n {
        let mut v: Vec<f64> = (0..len).map(|_| rng.sample(StandardNormal)).collect();
        // Modified Gram-Schmidt, twice for numerical safety.
        for _ in 0..2 {
            for b in &basis {
                let p = dot(&v, b);
                for (vi, bi) in v.iter_mut().zip(b) {
                    *vi -= p * bi;
                }
            }
        }
        let norm = dot(&v, &v).sqrt();
        if norm > 1e-8 {
            v.iter_mut().for_each(|x| *x /= norm);
            basis.push(v);
        }
    }
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[r * cols + c] = if rows <= cols { basis[r][c] } else { basis[c][r] };
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn orthogonal_rows_and_columns() {
        let mut r = rng::stream(1, 0);
        for (rows, cols) in [(3, 5), (5, 3), (4, 4)] {
            let m = orthogonal(rows, cols, &mut r);
            let (n, get): (usize, Box<dyn Fn(usize, usize) -> f64>) = if rows <= cols {
                (rows, Box::new(|i, k| m[i * cols + k]))
            } else {
                (cols, Box::new(|i, k| m[k * cols + i]))
            };
            let len = rows.max(cols);
            for i in 0..n {
                for j in 0..n {
                    let d: f64 = (0..len).map(|k| get(i, k) * get(j, k)).sum();
                    let expect = if i == j { 1.0 } else { 0.0 };
                    assert!((d - expect).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn zero_network_outputs_zero() {
        let layout = MlpLayout::new(vec![3, 8, 1]);
        let params = vec![0.0; layout.num_params()];
        let mut cache = layout.cache();
        layout.forward(&params, &[1.0, -2.0, 0.5], &mut cache);
        assert_eq!(cache.output(), &[0.0]);
    }

    #[test]
    fn single_linear_layer_is_dot_product() {
        let layout = MlpLayout::new(vec![3, 1]);
        let params = vec![0.5, -1.0, 2.0, 0.0];
        let mut cache = layout.cache();
        layout.forward(&params, &[2.0, 3.0, 1.0], &mut cache);
        assert_eq!(cache.output(), &[0.5 * 2.0 - 3.0 + 2.0]);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let layout = MlpLayout::new(vec![3, 5, 4, 2]);
        let mut r = rng::stream(2, 0);
        let params = layout.init(&mut r, 1.3, 0.7);
        let x = [0.3, -0.7, 1.1];
        let weights = [0.4, -1.3];
        let f = |p: &[f64]| {
            let mut c = layout.cache();
            layout.forward(p, &x, &mut c);
            c.output().iter().zip(weights).map(|(o, w)| o * w).sum::<f64>()
        };
        let mut cache = layout.cache();
        layout.forward(&params, &x, &mut cache);
        let mut grad = vec![0.0; layout.num_params()];
        layout.backward(&params, &mut cache, &weights, &mut grad);
        for i in 0..params.len() {
            let h = 1e-6;
            let mut p = params.clone();
            p[i] += h;
            let up = f(&p);
            p[i] -= 2.0 * h;
            let down = f(&p);
            let fd = (up - down) / (2.0 * h);
            assert!((fd - grad[i]).abs() < 1e-7, "param {i}: fd {fd} vs {}", grad[i]);
        }
    }
}
