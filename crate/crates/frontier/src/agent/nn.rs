//! Minimal fully-connected network with manual backpropagation.
//!
//! Parameters live in one flat `Vec<f64>` (per-layer weight blocks row-major,
//! then bias), which keeps the optimizer, gradient clipping, and checkpoint
//! code trivial. Hidden activations are tanh; the output layer is linear.

use rand::Rng;

/// Layer dims `[in, h1, ..., out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    dims: Vec<usize>,
    params: Vec<f64>,
    /// (weight offset, bias offset) per layer.
    offsets: Vec<(usize, usize)>,
}

/// Activations captured during a forward pass; `acts[0]` is the input,
/// `acts[l + 1]` the post-activation output of layer `l`.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub acts: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        self.acts.last().expect("cache always has layers")
    }
}

impl Mlp {
    fn layout(dims: &[usize]) -> (Vec<(usize, usize)>, usize) {
        assert!(dims.len() >= 2, "need at least input and output dims");
        let mut offsets = Vec::with_capacity(dims.len() - 1);
        let mut cursor = 0;
        for l in 0..dims.len() - 1 {
            let (fan_in, fan_out) = (dims[l], dims[l + 1]);
            offsets.push((cursor, cursor + fan_in * fan_out));
            cursor += fan_in * fan_out + fan_out;
        }
        (offsets, cursor)
    }

    /// Glorot-uniform weights, zero biases.
    pub fn new(dims: &[usize], rng: &mut impl Rng) -> Self {
        let (offsets, total) = Self::layout(dims);
        let mut params = vec![0.0; total];
        for l in 0..dims.len() - 1 {
            let (fan_in, fan_out) = (dims[l], dims[l + 1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let (w_off, _) = offsets[l];
            for w in &mut params[w_off..w_off + fan_in * fan_out] {
                *w = rng.gen_range(-limit..limit);
            }
        }
        Self {
            dims: dims.to_vec(),
            params,
            offsets,
        }
    }

    pub fn zeros(dims: &[usize]) -> Self {
        let (offsets, total) = Self::layout(dims);
        Self {
            dims: dims.to_vec(),
            params: vec![0.0; total],
            offsets,
        }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn in_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn out_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Scale the final layer (weights and bias); small factors make the
    /// initial policy output near zero without touching earlier layers.
    pub fn scale_final_layer(&mut self, k: f64) {
        let l = self.dims.len() - 2;
        let (w_off, b_off) = self.offsets[l];
        let out = self.dims[l + 1];
        for p in &mut self.params[w_off..b_off + out] {
            *p *= k;
        }
    }

    pub fn forward(&self, x: &[f64]) -> ForwardCache {
        assert_eq!(x.len(), self.dims[0], "input dim mismatch");
        let n_layers = self.dims.len() - 1;
        let mut acts = Vec::with_capacity(n_layers + 1);
        acts.push(x.to_vec());
        for l in 0..n_layers {
            let (fan_in, fan_out) = (self.dims[l], self.dims[l + 1]);
            let (w_off, b_off) = self.offsets[l];
            let input = &acts[l];
            let mut z = vec![0.0; fan_out];
            for o in 0..fan_out {
                let row = &self.params[w_off + o * fan_in..w_off + (o + 1) * fan_in];
                let mut acc = self.params[b_off + o];
                for i in 0..fan_in {
                    acc += row[i] * input[i];
                }
                z[o] = if l + 1 < n_layers { acc.tanh() } else { acc };
            }
            acts.push(z);
        }
        ForwardCache { acts }
    }

    /// Accumulate parameter gradients of a scalar loss into `grads` given
    /// `d_out` = dLoss/d(output); returns dLoss/d(input).
    pub fn backward(&self, cache: &ForwardCache, d_out: &[f64], grads: &mut [f64]) -> Vec<f64> {
        assert_eq!(grads.len(), self.params.len(), "grad buffer size mismatch");
        assert_eq!(d_out.len(), self.out_dim(), "d_out dim mismatch");
        let n_layers = self.dims.len() - 1;
        let mut d = d_out.to_vec();
        for l in (0..n_layers).rev() {
            let (fan_in, fan_out) = (self.dims[l], self.dims[l + 1]);
            let (w_off, b_off) = self.offsets[l];
            let input = &cache.acts[l];
            let out = &cache.acts[l + 1];
            // tanh' = 1 - out^2 on hidden layers; final layer is linear.
            let dz: Vec<f64> = if l + 1 < n_layers {
                d.iter()
                    .zip(out)
                    .map(|(di, oi)| di * (1.0 - oi * oi))
                    .collect()
            } else {
                d
            };
            for o in 0..fan_out {
                let g_row = &mut grads[w_off + o * fan_in..w_off + (o + 1) * fan_in];
                for i in 0..fan_in {
                    g_row[i] += dz[o] * input[i];
                }
                grads[b_off + o] += dz[o];
            }
            let mut d_prev = vec![0.0; fan_in];
            for o in 0..fan_out {
                let row = &self.params[w_off + o * fan_in..w_off + (o + 1) * fan_in];
                for i in 0..fan_in {
                    d_prev[i] += row[i] * dz[o];
                }
            }
            d = d_prev;
        }
        d
    }
}
