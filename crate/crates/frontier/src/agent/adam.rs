//! Adaptive moment optimizer plus the gradient-clipping and target
//! soft-update helpers shared across the SAC networks.

/// Adam with bias correction; default decay constants 0.9 / 0.999.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl Adam {
    pub fn new(n_params: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// Scale `grads` in place so its global L2 norm is at most `max_norm`;
/// returns the post-clip norm.
pub fn clip_global_norm(grads: &mut [f64], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let k = max_norm / norm;
        for g in grads.iter_mut() {
            *g *= k;
        }
        max_norm
    } else {
        norm
    }
}

/// Like [`clip_global_norm`] but over several buffers treated as one vector
/// (the flow policy has one gradient buffer per coupling block).
pub fn clip_global_norm_multi(bufs: &mut [Vec<f64>], max_norm: f64) -> f64 {
    let norm = bufs
        .iter()
        .flat_map(|b| b.iter())
        .map(|g| g * g)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm > 0.0 {
        let k = max_norm / norm;
        for b in bufs.iter_mut() {
            for g in b.iter_mut() {
                *g *= k;
            }
        }
        max_norm
    } else {
        norm
    }
}

/// target <- (1 - tau) * target + tau * online, elementwise.
pub fn soft_update(target: &mut [f64], online: &[f64], tau: f64) {
    debug_assert_eq!(target.len(), online.len());
    for (t, o) in target.iter_mut().zip(online) {
        *t = (1.0 - tau) * *t + tau * *o;
    }
}
