//! Smooth scalar uncertainty fields and their derivative/curvature machinery.
//!
//! A field is a sum of Gaussian bumps, which keeps it C-infinity and therefore
//! safely inside the C² class the shaping algebra needs. The log-cosh
//! potential of the distance to a target level, its gradient/Hessian, and a
//! sampled curvature bound live here too because they are pure functions of
//! the field.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::linalg::{norm, sym_opnorm};
use crate::{Error, Result};

/// One isotropic Gaussian bump `A * exp(-||s - c||^2 / (2 sigma^2))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianBump {
    pub amplitude: f64,
    pub center: Vec<f64>,
    pub sigma: f64,
}

/// Sum of Gaussian bumps over R^d. Bump centers all have dimension `dim`.
///
/// An empty bump list is allowed and yields the constant-zero field; it is
/// useful for exercising degenerate-field behavior in verification, while
/// experiment configs require at least one bump.
#[derive(Debug, Clone)]
pub struct UncertaintyField {
    bumps: Vec<GaussianBump>,
    dim: usize,
}

/// A C² scalar field with analytic derivatives. Implemented by
/// [`UncertaintyField`] and by simple test doubles (e.g. linear fields).
pub trait ScalarField {
    fn dim(&self) -> usize;
    fn value(&self, s: &[f64]) -> Result<f64>;
    fn gradient(&self, s: &[f64]) -> Result<Vec<f64>>;
    /// Row-major `d x d` Hessian; symmetric.
    fn hessian(&self, s: &[f64]) -> Result<Vec<f64>>;

    fn check_dim(&self, s: &[f64], context: &str) -> Result<()> {
        if s.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: s.len(),
                context: context.to_string(),
            });
        }
        Ok(())
    }
}

impl UncertaintyField {
    pub fn new(dim: usize, bumps: Vec<GaussianBump>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidInput("field dimension must be >= 1".into()));
        }
        for (i, b) in bumps.iter().enumerate() {
            if b.center.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: b.center.len(),
                    context: format!("center of bump {i}"),
                });
            }
            if !(b.amplitude > 0.0) || !b.amplitude.is_finite() {
                return Err(Error::InvalidInput(format!(
                    "bump {i}: amplitude must be finite and > 0, got {}",
                    b.amplitude
                )));
            }
            if !(b.sigma > 0.0) || !b.sigma.is_finite() {
                return Err(Error::InvalidInput(format!(
                    "bump {i}: sigma must be finite and > 0, got {}",
                    b.sigma
                )));
            }
        }
        Ok(Self { bumps, dim })
    }

    pub fn bumps(&self) -> &[GaussianBump] {
        &self.bumps
    }

    /// Upper bound on the field value: sum of amplitudes.
    pub fn amplitude_sum(&self) -> f64 {
        self.bumps.iter().map(|b| b.amplitude).sum()
    }

    /// Smallest bump amplitude; `None` for the constant-zero field.
    pub fn min_amplitude(&self) -> Option<f64> {
        self.bumps
            .iter()
            .map(|b| b.amplitude)
            .fold(None, |acc, a| Some(acc.map_or(a, |m: f64| m.min(a))))
    }
}

impl ScalarField for UncertaintyField {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, s: &[f64]) -> Result<f64> {
        self.check_dim(s, "field value")?;
        let mut total = 0.0;
        for b in &self.bumps {
            let q: f64 = s
                .iter()
                .zip(&b.center)
                .map(|(x, c)| (x - c) * (x - c))
                .sum();
            total += b.amplitude * (-q / (2.0 * b.sigma * b.sigma)).exp();
        }
        Ok(total)
    }

    fn gradient(&self, s: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(s, "field gradient")?;
        let mut g = vec![0.0; self.dim];
        for b in &self.bumps {
            let q: f64 = s
                .iter()
                .zip(&b.center)
                .map(|(x, c)| (x - c) * (x - c))
                .sum();
            let sigma2 = b.sigma * b.sigma;
            let coeff = -(b.amplitude / sigma2) * (-q / (2.0 * sigma2)).exp();
            for i in 0..self.dim {
                g[i] += coeff * (s[i] - b.center[i]);
            }
        }
        Ok(g)
    }

    fn hessian(&self, s: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(s, "field hessian")?;
        let d = self.dim;
        let mut h = vec![0.0; d * d];
        for b in &self.bumps {
            let diff: Vec<f64> = s.iter().zip(&b.center).map(|(x, c)| x - c).collect();
            let q: f64 = diff.iter().map(|x| x * x).sum();
            let sigma2 = b.sigma * b.sigma;
            let e = (-q / (2.0 * sigma2)).exp();
            let outer_coeff = b.amplitude / (sigma2 * sigma2) * e;
            let diag_coeff = b.amplitude / sigma2 * e;
            for i in 0..d {
                for j in 0..d {
                    // Grouping the product keeps h[i][j] and h[j][i] bitwise
                    // equal: diff[i] * diff[j] commutes, left-to-right
                    // evaluation of the ungrouped chain does not.
                    h[i * d + j] += outer_coeff * (diff[i] * diff[j]);
                }
                h[i * d + i] -= diag_coeff;
            }
        }
        Ok(h)
    }
}

/// Axis-aligned box region used for sampling and clamping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Region {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.is_empty() || lo.len() != hi.len() {
            return Err(Error::InvalidInput(format!(
                "region bounds must be nonempty and equal length, got {} and {}",
                lo.len(),
                hi.len()
            )));
        }
        for i in 0..lo.len() {
            if !(lo[i] <= hi[i]) {
                return Err(Error::InvalidInput(format!(
                    "empty region: lo[{i}] = {} > hi[{i}] = {}",
                    lo[i], hi[i]
                )));
            }
        }
        Ok(Self { lo, hi })
    }

    pub fn unit_box(dim: usize) -> Self {
        Self {
            lo: vec![0.0; dim],
            hi: vec![1.0; dim],
        }
    }

    /// Grow the box by `margin` on every side.
    pub fn inflate(&self, margin: f64) -> Self {
        Self {
            lo: self.lo.iter().map(|x| x - margin).collect(),
            hi: self.hi.iter().map(|x| x + margin).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    /// One uniform sample. Draws exactly `dim` uniforms in coordinate order,
    /// so sequences of samples from a freshly seeded rng are prefix-stable:
    /// the first n of 2n samples are identical.
    pub fn sample(&self, rng: &mut impl Rng) -> Vec<f64> {
        (0..self.dim())
            .map(|i| self.lo[i] + rng.gen::<f64>() * (self.hi[i] - self.lo[i]))
            .collect()
    }

    pub fn contains(&self, s: &[f64]) -> bool {
        s.len() == self.dim()
            && s.iter()
                .enumerate()
                .all(|(i, x)| *x >= self.lo[i] && *x <= self.hi[i])
    }

    pub fn clamp(&self, s: &[f64]) -> Vec<f64> {
        s.iter()
            .enumerate()
            .map(|(i, x)| x.clamp(self.lo[i], self.hi[i]))
            .collect()
    }
}

/// Numerically stable log(cosh(x)) = |x| + log1p(exp(-2|x|)) - log 2.
pub fn log_cosh(x: f64) -> f64 {
    let a = x.abs();
    a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
}

/// Potential of the distance to the target level: psi(s) = log cosh(U(s) - u_mid).
pub fn psi(field: &impl ScalarField, u_mid: f64, s: &[f64]) -> Result<f64> {
    Ok(log_cosh(field.value(s)? - u_mid))
}

/// grad psi = tanh(U - u_mid) * grad U.
pub fn psi_gradient(field: &impl ScalarField, u_mid: f64, s: &[f64]) -> Result<Vec<f64>> {
    let t = (field.value(s)? - u_mid).tanh();
    Ok(field.gradient(s)?.into_iter().map(|g| t * g).collect())
}

/// hess psi = sech^2(U - u_mid) * grad U grad U^T + tanh(U - u_mid) * hess U.
pub fn psi_hessian(field: &impl ScalarField, u_mid: f64, s: &[f64]) -> Result<Vec<f64>> {
    let d = field.dim();
    let t = (field.value(s)? - u_mid).tanh();
    let sech2 = 1.0 - t * t;
    let g = field.gradient(s)?;
    let hu = field.hessian(s)?;
    let mut h = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            h[i * d + j] = sech2 * g[i] * g[j] + t * hu[i * d + j];
        }
    }
    Ok(h)
}

/// Sampled upper bound on the operator norm of the potential Hessian over a
/// box, times a 1.01 safety factor for sampling gaps. Deterministic given the
/// rng seed, and monotone in `n_samples` for a fixed seed because samples are
/// drawn sequentially (nested prefixes).
pub fn curvature_bound(
    field: &impl ScalarField,
    u_mid: f64,
    region: &Region,
    n_samples: usize,
    rng: &mut impl Rng,
) -> Result<f64> {
    if n_samples == 0 {
        return Err(Error::InvalidInput(
            "curvature_bound requires n_samples >= 1".into(),
        ));
    }
    if region.dim() != field.dim() {
        return Err(Error::DimensionMismatch {
            expected: field.dim(),
            got: region.dim(),
            context: "curvature_bound region".into(),
        });
    }
    let d = field.dim();
    let mut max_norm = 0.0_f64;
    for _ in 0..n_samples {
        let s = region.sample(rng);
        let h = psi_hessian(field, u_mid, &s)?;
        max_norm = max_norm.max(sym_opnorm(&h, d));
    }
    Ok(max_norm * 1.01)
}

/// Regular-value probe: minimum gradient norm over sampled points whose field
/// value lies within `delta_band` of `u_mid`.
#[derive(Debug, Clone, Serialize)]
pub struct BandProbe {
    pub n_sampled: usize,
    pub n_in_band: usize,
    /// `None` when no sample landed in the band.
    pub min_grad_norm: Option<f64>,
}

pub fn band_gradient_probe(
    field: &impl ScalarField,
    u_mid: f64,
    delta_band: f64,
    region: &Region,
    n_samples: usize,
    rng: &mut impl Rng,
) -> Result<BandProbe> {
    if region.dim() != field.dim() {
        return Err(Error::DimensionMismatch {
            expected: field.dim(),
            got: region.dim(),
            context: "band probe region".into(),
        });
    }
    let mut n_in_band = 0;
    let mut min_grad: Option<f64> = None;
    for _ in 0..n_samples {
        let s = region.sample(rng);
        if (field.value(&s)? - u_mid).abs() < delta_band {
            n_in_band += 1;
            let gn = norm(&field.gradient(&s)?);
            min_grad = Some(min_grad.map_or(gn, |m| m.min(gn)));
        }
    }
    Ok(BandProbe {
        n_sampled: n_samples,
        n_in_band,
        min_grad_norm: min_grad,
    })
}
