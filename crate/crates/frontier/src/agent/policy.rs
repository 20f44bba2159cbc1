//! Stochastic policies: a tanh-squashed diagonal Gaussian (default) and an
//! affine-coupling flow variant behind the same interface.
//!
//! Policies act on the normalized box (-1, 1)^act_dim; the environment owns
//! the physical action scale. Computing densities on the physical box would
//! shift every log-density by -act_dim * ln(action_limit), and for small
//! limits that constant turns the SAC entropy term into a per-step survival
//! penalty large enough to make terminating the episode the optimal policy.
//!
//! Both expose a reparameterized `propagate` (fixed base noise in, action and
//! exact log-density out) plus a manual `backward` so the actor update can
//! push gradients from both the Q-value path and the entropy path.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::agent::nn::{ForwardCache, Mlp};
use crate::sampling::randn_vec;
use crate::{Error, Result};

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;
const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;
/// Largest tanh magnitude we emit; keeps sampled actions strictly inside the
/// open interval even when tanh rounds to 1.0 in f64.
const MAX_TANH: f64 = 1.0 - 1e-15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Gaussian,
    Flow,
}

/// Stable softplus: log(1 + e^x).
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Stable log(1 - tanh(u)^2) = 2 (ln 2 - u - softplus(-2u)).
fn log1m_tanh2(u: f64) -> f64 {
    2.0 * (std::f64::consts::LN_2 - u - softplus(-2.0 * u))
}

/// Smooth clamp of the raw log-std head into [LOG_STD_MIN, LOG_STD_MAX].
fn squash_log_std(raw: f64) -> f64 {
    LOG_STD_MIN + 0.5 * (LOG_STD_MAX - LOG_STD_MIN) * (1.0 + raw.tanh())
}

fn squash_log_std_deriv(raw: f64) -> f64 {
    let t = raw.tanh();
    0.5 * (LOG_STD_MAX - LOG_STD_MIN) * (1.0 - t * t)
}

fn check_finite(values: &[f64], what: &str) -> Result<()> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Divergence(format!(
            "{what} produced a non-finite value: {values:?}"
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Gaussian policy
// ---------------------------------------------------------------------------

/// MLP head producing (mean, raw log-std); action = tanh(mean + sigma * xi).
#[derive(Debug, Clone)]
pub struct GaussianPolicy {
    pub net: Mlp,
    pub act_dim: usize,
}

#[derive(Debug, Clone)]
pub struct GaussCache {
    fwd: ForwardCache,
    xi: Vec<f64>,
    tanh_u: Vec<f64>,
    sigma: Vec<f64>,
    raw: Vec<f64>,
}

impl GaussianPolicy {
    pub fn new(
        obs_dim: usize,
        act_dim: usize,
        hidden_width: usize,
        hidden_depth: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let mut dims = vec![obs_dim];
        dims.extend(std::iter::repeat(hidden_width).take(hidden_depth));
        dims.push(2 * act_dim);
        let mut net = Mlp::new(&dims, rng);
        // Start near-deterministic around zero action with mid-range std.
        net.scale_final_layer(0.01);
        Self { net, act_dim }
    }

    /// Forward with fixed base noise `xi` (len act_dim); spells out the whole
    /// sampling path so finite differences can replay it exactly.
    pub fn propagate(&self, obs: &[f64], xi: &[f64]) -> Result<(GaussCache, Vec<f64>, f64)> {
        let fwd = self.net.forward(obs);
        check_finite(fwd.output(), "gaussian policy head")?;
        let out = fwd.output();
        let d = self.act_dim;
        let mut action = vec![0.0; d];
        let mut tanh_u = vec![0.0; d];
        let mut sigma = vec![0.0; d];
        let mut raw = vec![0.0; d];
        let mut log_prob = 0.0;
        for j in 0..d {
            let mean = out[j];
            raw[j] = out[d + j];
            let log_std = squash_log_std(raw[j]);
            sigma[j] = log_std.exp();
            let u = mean + sigma[j] * xi[j];
            let th = u.tanh().clamp(-MAX_TANH, MAX_TANH);
            tanh_u[j] = th;
            action[j] = th;
            log_prob += -0.5 * xi[j] * xi[j] - log_std - HALF_LN_2PI;
            log_prob -= log1m_tanh2(u);
        }
        Ok((
            GaussCache {
                fwd,
                xi: xi.to_vec(),
                tanh_u,
                sigma,
                raw,
            },
            action,
            log_prob,
        ))
    }

    /// Gradient of `sum_j d_action[j] * a_j + d_logp * log_prob` w.r.t. the
    /// network parameters, accumulated into `grads`.
    pub fn backward(&self, cache: &GaussCache, d_action: &[f64], d_logp: f64, grads: &mut [f64]) {
        let d = self.act_dim;
        let mut d_out = vec![0.0; 2 * d];
        for j in 0..d {
            let th = cache.tanh_u[j];
            // d/du of tanh u and of -log(1 - tanh^2 u).
            let du = d_action[j] * (1.0 - th * th) + d_logp * 2.0 * th;
            d_out[j] = du;
            let d_log_std = du * cache.sigma[j] * cache.xi[j] - d_logp;
            d_out[d + j] = d_log_std * squash_log_std_deriv(cache.raw[j]);
        }
        self.net.backward(&cache.fwd, &d_out, grads);
    }

    /// Exact log-density of an arbitrary in-range action.
    pub fn log_prob_of(&self, obs: &[f64], action: &[f64]) -> Result<f64> {
        let fwd = self.net.forward(obs);
        check_finite(fwd.output(), "gaussian policy head")?;
        let out = fwd.output();
        let d = self.act_dim;
        let mut log_prob = 0.0;
        for j in 0..d {
            let mean = out[j];
            let log_std = squash_log_std(out[d + j]);
            let sigma = log_std.exp();
            let y = action[j].clamp(-MAX_TANH, MAX_TANH);
            let u = y.atanh();
            let z = (u - mean) / sigma;
            log_prob += -0.5 * z * z - log_std - HALF_LN_2PI;
            log_prob -= log1m_tanh2(u);
        }
        Ok(log_prob)
    }
}

// ---------------------------------------------------------------------------
// Flow policy
// ---------------------------------------------------------------------------

/// Affine coupling flow conditioned on the observation: K blocks, each
/// rescaling/shifting half the coordinates as a function of the other half
/// and the observation, then a final tanh squash to the action box.
#[derive(Debug, Clone)]
pub struct FlowPolicy {
    pub obs_dim: usize,
    pub act_dim: usize,
    /// Soft cap on coupling log-scales (via s_cap * tanh).
    pub s_cap: f64,
    pub blocks: Vec<Mlp>,
}

#[derive(Debug, Clone)]
struct BlockCache {
    fwd: ForwardCache,
    /// Pre-transform values of the transformed coordinates.
    z_in_t: Vec<f64>,
    /// Capped log-scales s = s_cap * tanh(s_hat).
    s: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct FlowCache {
    xi: Vec<f64>,
    per_block: Vec<BlockCache>,
    tanh_z: Vec<f64>,
}

impl FlowPolicy {
    /// Indices transformed by block `k`; the rest condition the block.
    fn transformed(&self, k: usize) -> Vec<usize> {
        if self.act_dim == 1 {
            vec![0]
        } else {
            (0..self.act_dim).filter(|i| (i + k) % 2 == 0).collect()
        }
    }

    fn conditioning(&self, k: usize) -> Vec<usize> {
        let t = self.transformed(k);
        (0..self.act_dim).filter(|i| !t.contains(i)).collect()
    }

    pub fn new(
        obs_dim: usize,
        act_dim: usize,
        n_blocks: usize,
        hidden_width: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let mut policy = Self {
            obs_dim,
            act_dim,
            s_cap: 2.0,
            blocks: Vec::with_capacity(n_blocks),
        };
        for k in 0..n_blocks {
            let n_t = policy.transformed(k).len();
            let n_c = act_dim - n_t;
            let mut net = Mlp::new(&[n_c + obs_dim, hidden_width, 2 * n_t], rng);
            // Zero last layer: every block starts as the identity map.
            net.scale_final_layer(0.0);
            policy.blocks.push(net);
        }
        policy
    }

    pub fn propagate(&self, obs: &[f64], xi: &[f64]) -> Result<(FlowCache, Vec<f64>, f64)> {
        let d = self.act_dim;
        let mut z = xi.to_vec();
        let mut log_prob: f64 = xi.iter().map(|x| -0.5 * x * x - HALF_LN_2PI).sum();
        let mut per_block = Vec::with_capacity(self.blocks.len());
        for (k, net) in self.blocks.iter().enumerate() {
            let t_idx = self.transformed(k);
            let c_idx = self.conditioning(k);
            let mut input = Vec::with_capacity(c_idx.len() + self.obs_dim);
            input.extend(c_idx.iter().map(|&i| z[i]));
            input.extend_from_slice(obs);
            let fwd = net.forward(&input);
            check_finite(fwd.output(), "flow block")?;
            let out = fwd.output();
            let n_t = t_idx.len();
            let mut z_in_t = vec![0.0; n_t];
            let mut s_vec = vec![0.0; n_t];
            for (m, &i) in t_idx.iter().enumerate() {
                let s = self.s_cap * out[m].tanh();
                let t_shift = out[n_t + m];
                z_in_t[m] = z[i];
                z[i] = z[i] * s.exp() + t_shift;
                s_vec[m] = s;
                log_prob -= s;
            }
            per_block.push(BlockCache {
                fwd,
                z_in_t,
                s: s_vec,
            });
        }
        check_finite(&z, "flow output")?;
        let mut action = vec![0.0; d];
        let mut tanh_z = vec![0.0; d];
        for j in 0..d {
            let th = z[j].tanh().clamp(-MAX_TANH, MAX_TANH);
            tanh_z[j] = th;
            action[j] = th;
            log_prob -= log1m_tanh2(z[j]);
        }
        Ok((
            FlowCache {
                xi: xi.to_vec(),
                per_block,
                tanh_z,
            },
            action,
            log_prob,
        ))
    }

    pub fn backward(
        &self,
        cache: &FlowCache,
        d_action: &[f64],
        d_logp: f64,
        grads: &mut [Vec<f64>],
    ) {
        assert_eq!(grads.len(), self.blocks.len());
        let d = self.act_dim;
        let mut dz = vec![0.0; d];
        for j in 0..d {
            let th = cache.tanh_z[j];
            dz[j] = d_action[j] * (1.0 - th * th) + d_logp * 2.0 * th;
        }
        let _ = cache.xi; // base noise carries no parameter dependence
        for k in (0..self.blocks.len()).rev() {
            let t_idx = self.transformed(k);
            let c_idx = self.conditioning(k);
            let bc = &cache.per_block[k];
            let n_t = t_idx.len();
            let mut d_out = vec![0.0; 2 * n_t];
            for (m, &i) in t_idx.iter().enumerate() {
                let dz_out = dz[i];
                let e_s = bc.s[m].exp();
                // z_out = z_in * e^s + t; log_prob carries a -s term.
                let d_s = dz_out * bc.z_in_t[m] * e_s - d_logp;
                let tanh_s_hat = bc.s[m] / self.s_cap;
                d_out[m] = d_s * self.s_cap * (1.0 - tanh_s_hat * tanh_s_hat);
                d_out[n_t + m] = dz_out;
                dz[i] = dz_out * e_s;
            }
            let d_input = self.blocks[k].backward(&bc.fwd, &d_out, &mut grads[k]);
            for (m, &i) in c_idx.iter().enumerate() {
                dz[i] += d_input[m];
            }
        }
    }

    pub fn log_prob_of(&self, obs: &[f64], action: &[f64]) -> Result<f64> {
        let d = self.act_dim;
        let mut z = vec![0.0; d];
        let mut log_prob = 0.0;
        for j in 0..d {
            let y = action[j].clamp(-MAX_TANH, MAX_TANH);
            z[j] = y.atanh();
            log_prob -= log1m_tanh2(z[j]);
        }
        // Invert the blocks back to the base sample.
        for k in (0..self.blocks.len()).rev() {
            let t_idx = self.transformed(k);
            let c_idx = self.conditioning(k);
            let mut input = Vec::with_capacity(c_idx.len() + self.obs_dim);
            input.extend(c_idx.iter().map(|&i| z[i]));
            input.extend_from_slice(obs);
            let fwd = self.blocks[k].forward(&input);
            check_finite(fwd.output(), "flow block")?;
            let out = fwd.output();
            let n_t = t_idx.len();
            for (m, &i) in t_idx.iter().enumerate() {
                let s = self.s_cap * out[m].tanh();
                let t_shift = out[n_t + m];
                z[i] = (z[i] - t_shift) * (-s).exp();
                log_prob -= s;
            }
        }
        log_prob += z.iter().map(|x| -0.5 * x * x - HALF_LN_2PI).sum::<f64>();
        Ok(log_prob)
    }
}

// ---------------------------------------------------------------------------
// Unified interface
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub enum Policy {
    Gaussian(GaussianPolicy),
    Flow(FlowPolicy),
}

#[derive(Debug, Clone)]
pub enum PolicyCache {
    Gaussian(GaussCache),
    Flow(FlowCache),
}

impl Policy {
    pub fn act_dim(&self) -> usize {
        match self {
            Policy::Gaussian(p) => p.act_dim,
            Policy::Flow(p) => p.act_dim,
        }
    }

    pub fn obs_dim(&self) -> usize {
        match self {
            Policy::Gaussian(p) => p.net.in_dim(),
            Policy::Flow(p) => p.obs_dim,
        }
    }

    pub fn kind(&self) -> PolicyKind {
        match self {
            Policy::Gaussian(_) => PolicyKind::Gaussian,
            Policy::Flow(_) => PolicyKind::Flow,
        }
    }

    pub fn nets(&self) -> Vec<&Mlp> {
        match self {
            Policy::Gaussian(p) => vec![&p.net],
            Policy::Flow(p) => p.blocks.iter().collect(),
        }
    }

    pub fn nets_mut(&mut self) -> Vec<&mut Mlp> {
        match self {
            Policy::Gaussian(p) => vec![&mut p.net],
            Policy::Flow(p) => p.blocks.iter_mut().collect(),
        }
    }

    /// Fresh zeroed gradient buffers, one per underlying network.
    pub fn grad_buffers(&self) -> Vec<Vec<f64>> {
        self.nets().iter().map(|n| vec![0.0; n.n_params()]).collect()
    }

    pub fn propagate(&self, obs: &[f64], xi: &[f64]) -> Result<(PolicyCache, Vec<f64>, f64)> {
        match self {
            Policy::Gaussian(p) => {
                let (c, a, lp) = p.propagate(obs, xi)?;
                Ok((PolicyCache::Gaussian(c), a, lp))
            }
            Policy::Flow(p) => {
                let (c, a, lp) = p.propagate(obs, xi)?;
                Ok((PolicyCache::Flow(c), a, lp))
            }
        }
    }

    /// Sample (or take the squashed mean) and return the exact log-density of
    /// the returned action.
    pub fn act(
        &self,
        obs: &[f64],
        rng: &mut impl Rng,
        deterministic: bool,
    ) -> Result<(Vec<f64>, f64)> {
        let xi = if deterministic {
            vec![0.0; self.act_dim()]
        } else {
            randn_vec(rng, self.act_dim())
        };
        let (_, a, lp) = self.propagate(obs, &xi)?;
        Ok((a, lp))
    }

    pub fn sample_with_cache(
        &self,
        obs: &[f64],
        rng: &mut impl Rng,
    ) -> Result<(PolicyCache, Vec<f64>, f64)> {
        let xi = randn_vec(rng, self.act_dim());
        self.propagate(obs, &xi)
    }

    /// Accumulate d(d_action . a + d_logp * log_prob)/d(params) into `grads`
    /// (one buffer per net, as returned by `grad_buffers`).
    pub fn backward(
        &self,
        cache: &PolicyCache,
        d_action: &[f64],
        d_logp: f64,
        grads: &mut [Vec<f64>],
    ) {
        match (self, cache) {
            (Policy::Gaussian(p), PolicyCache::Gaussian(c)) => {
                p.backward(c, d_action, d_logp, &mut grads[0])
            }
            (Policy::Flow(p), PolicyCache::Flow(c)) => p.backward(c, d_action, d_logp, grads),
            _ => panic!("policy cache kind mismatch"),
        }
    }

    pub fn log_prob_of(&self, obs: &[f64], action: &[f64]) -> Result<f64> {
        match self {
            Policy::Gaussian(p) => p.log_prob_of(obs, action),
            Policy::Flow(p) => p.log_prob_of(obs, action),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcheck::relative_error;
    use crate::sampling::{stream, stream_rng};

    fn gaussian(obs_dim: usize, act_dim: usize, seed: u64) -> Policy {
        Policy::Gaussian(GaussianPolicy::new(
            obs_dim,
            act_dim,
            8,
            2,
            &mut stream_rng(seed, stream::INIT),
        ))
    }

    fn flow(obs_dim: usize, act_dim: usize, seed: u64) -> Policy {
        let mut p = FlowPolicy::new(obs_dim, act_dim, 4, 8, &mut stream_rng(seed, stream::INIT));
        // Perturb away from the identity so tests exercise real couplings.
        let mut rng = stream_rng(seed + 1, stream::INIT);
        for net in &mut p.blocks {
            for w in net.params_mut() {
                *w += 0.05 * (rng.gen::<f64>() - 0.5);
            }
        }
        Policy::Flow(p)
    }

    #[test]
    fn zero_final_layer_means_zero_deterministic_action() {
        let mut rng = stream_rng(1, stream::INIT);
        let mut p = GaussianPolicy::new(2, 2, 8, 2, &mut rng);
        p.net.scale_final_layer(0.0);
        let pol = Policy::Gaussian(p);
        let (a, _) = pol.act(&[0.3, 0.8], &mut rng, true).unwrap();
        assert_eq!(a, vec![0.0, 0.0]);
    }

    #[test]
    fn samples_stay_strictly_inside_the_action_box() {
        for pol in [gaussian(2, 2, 2), flow(2, 2, 3)] {
            let mut rng = stream_rng(4, stream::POLICY);
            for _ in 0..2000 {
                let obs = [rng.gen::<f64>(), rng.gen::<f64>()];
                let (a, lp) = pol.act(&obs, &mut rng, false).unwrap();
                for c in &a {
                    assert!(c.abs() < 1.0, "component {c} escaped the box");
                }
                assert!(lp.is_finite());
            }
        }
    }

    #[test]
    fn gaussian_log_prob_of_matches_sampled_log_prob() {
        let pol = gaussian(3, 2, 5);
        let mut rng = stream_rng(6, stream::POLICY);
        for _ in 0..200 {
            let obs = [rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>()];
            let xi = randn_vec(&mut rng, 2);
            let (_, a, lp) = pol.propagate(&obs, &xi).unwrap();
            let lp2 = pol.log_prob_of(&obs, &a).unwrap();
            assert!(
                relative_error(lp2, lp) < 1e-6,
                "sampled {lp} vs recomputed {lp2}"
            );
        }
    }

    #[test]
    fn flow_log_prob_of_matches_sampled_log_prob() {
        let pol = flow(2, 2, 7);
        let mut rng = stream_rng(8, stream::POLICY);
        for _ in 0..200 {
            let obs = [rng.gen::<f64>(), rng.gen::<f64>()];
            let xi = randn_vec(&mut rng, 2);
            let (_, a, lp) = pol.propagate(&obs, &xi).unwrap();
            let lp2 = pol.log_prob_of(&obs, &a).unwrap();
            assert!(
                relative_error(lp2, lp) < 1e-6,
                "sampled {lp} vs inverted {lp2}"
            );
        }
    }

    /// Numerical quadrature of the 1-d action density must integrate to 1.
    fn density_integral(pol: &Policy, obs: &[f64]) -> f64 {
        let n = 40_001;
        let a_min = -(1.0 - 1e-9);
        let a_max = 1.0 - 1e-9;
        let h = (a_max - a_min) / (n - 1) as f64;
        let mut total = 0.0;
        for i in 0..n {
            let a = a_min + h * i as f64;
            let p = pol.log_prob_of(obs, &[a]).unwrap().exp();
            let w = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
            total += w * p * h;
        }
        total
    }

    #[test]
    fn one_dimensional_densities_integrate_to_one() {
        let g = gaussian(2, 1, 9);
        let f = flow(2, 1, 11);
        for pol in [g, f] {
            let integral = density_integral(&pol, &[0.4, -0.2]);
            assert!(
                (integral - 1.0).abs() < 0.02,
                "density integrated to {integral}"
            );
        }
    }

    /// Independent CDF oracle: P(A <= a) via Simpson integration of the base
    /// normal density up to atanh(a).
    fn gaussian_cdf(mean: f64, sigma: f64, a: f64) -> f64 {
        let u_hi = a.atanh();
        let u_lo = mean - 12.0 * sigma;
        let n = 20_000; // even
        let h = (u_hi - u_lo) / n as f64;
        let pdf = |u: f64| {
            let z = (u - mean) / sigma;
            (-0.5 * z * z).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt())
        };
        let mut acc = pdf(u_lo) + pdf(u_hi);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            acc += w * pdf(u_lo + h * i as f64);
        }
        acc * h / 3.0
    }

    #[test]
    fn log_prob_matches_cdf_derivative_on_1d_slices() {
        let pol = gaussian(2, 1, 13);
        let obs = [0.25, 0.75];
        // Extract the head outputs to drive the oracle.
        let (mean, sigma) = match &pol {
            Policy::Gaussian(p) => {
                let out = p.net.forward(&obs).output().to_vec();
                (out[0], squash_log_std(out[1]).exp())
            }
            _ => unreachable!(),
        };
        let mut rng = stream_rng(14, stream::POLICY);
        for _ in 0..20 {
            let (a, lp) = pol.act(&obs, &mut rng, false).unwrap();
            let h = 1e-5;
            let cdf_hi = gaussian_cdf(mean, sigma, a[0] + h);
            let cdf_lo = gaussian_cdf(mean, sigma, a[0] - h);
            let density_numeric = (cdf_hi - cdf_lo) / (2.0 * h);
            let density_analytic = lp.exp();
            assert!(
                relative_error(density_numeric, density_analytic) < 1e-3,
                "numeric {density_numeric} vs analytic {density_analytic}"
            );
        }
    }

    /// FD check of the full actor backward path with fixed base noise.
    fn check_policy_backward(mut pol: Policy, obs: Vec<f64>) {
        let act_dim = pol.act_dim();
        let mut rng = stream_rng(21, stream::POLICY);
        let xi = randn_vec(&mut rng, act_dim);
        let d_action: Vec<f64> = (0..act_dim).map(|j| 0.7 - 0.3 * j as f64).collect();
        let d_logp = 0.45;

        let scalar = |p: &Policy| {
            let (_, a, lp) = p.propagate(&obs, &xi).unwrap();
            a.iter().zip(&d_action).map(|(x, c)| x * c).sum::<f64>() + d_logp * lp
        };

        let (cache, _, _) = pol.propagate(&obs, &xi).unwrap();
        let mut grads = pol.grad_buffers();
        pol.backward(&cache, &d_action, d_logp, &mut grads);

        let h = 1e-5;
        let mut worst = 0.0_f64;
        for net_i in 0..grads.len() {
            let n = pol.nets()[net_i].n_params();
            for p_i in 0..n {
                let orig = pol.nets()[net_i].params()[p_i];
                pol.nets_mut()[net_i].params_mut()[p_i] = orig + h;
                let fp = scalar(&pol);
                pol.nets_mut()[net_i].params_mut()[p_i] = orig - h;
                let fm = scalar(&pol);
                pol.nets_mut()[net_i].params_mut()[p_i] = orig;
                let numeric = (fp - fm) / (2.0 * h);
                worst = worst.max(relative_error(numeric, grads[net_i][p_i]));
            }
        }
        assert!(worst < 1e-4, "worst rel err {worst}");
    }

    #[test]
    fn gaussian_backward_matches_finite_differences() {
        check_policy_backward(gaussian(3, 2, 15), vec![0.3, -0.6, 0.2]);
    }

    #[test]
    fn flow_backward_matches_finite_differences() {
        check_policy_backward(flow(2, 2, 17), vec![0.45, 0.1]);
    }

    #[test]
    fn non_finite_head_reports_divergence() {
        let mut pol = gaussian(2, 2, 19);
        if let Policy::Gaussian(p) = &mut pol {
            p.net.params_mut()[0] = f64::NAN;
        }
        let mut rng = stream_rng(20, stream::POLICY);
        assert!(matches!(
            pol.act(&[0.1, 0.2], &mut rng, false),
            Err(Error::Divergence(_))
        ));
    }

    #[test]
    fn deterministic_act_is_reproducible_and_noise_free() {
        let pol = flow(2, 2, 23);
        let mut r1 = stream_rng(1, stream::POLICY);
        let mut r2 = stream_rng(2, stream::POLICY);
        let (a1, _) = pol.act(&[0.5, 0.5], &mut r1, true).unwrap();
        let (a2, _) = pol.act(&[0.5, 0.5], &mut r2, true).unwrap();
        assert_eq!(a1, a2);
    }

    #[test]
    fn softplus_and_log1m_tanh2_are_stable() {
        assert!((log1m_tanh2(0.0)).abs() < 1e-15);
        for u in [-500.0, -30.0, -1.0, 0.3, 30.0, 500.0] {
            assert!(log1m_tanh2(u).is_finite());
            assert!(log1m_tanh2(u) <= 0.0);
        }
        // Against the naive formula where it does not underflow.
        for u in [-5.0_f64, -0.7, 0.0, 0.4, 3.0] {
            let naive = (1.0 - u.tanh() * u.tanh()).ln();
            assert!(relative_error(log1m_tanh2(u), naive) < 1e-10);
        }
        assert!((softplus(0.0) - std::f64::consts::LN_2).abs() < 1e-15);
    }
}
