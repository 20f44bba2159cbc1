//! The vector-field shaping reward, its potential decomposition, and the
//! state-based baseline reward with safety penalty.
//!
//! The shaped reward for a transition s -> s' with step d = s' - s is
//!
//! ```text
//! r' = c_grad * alpha(U(s)) <grad U(s), d>  +  c_rot * beta(U(s)) <W grad U(s), d>
//! ```
//!
//! where `alpha` pulls toward the target level `u_mid` from either side,
//! `beta` gates the rotational term to peak on the level set, and `W` is a
//! constant skew-symmetric generator whose action on the gradient is always
//! tangent to the level set.

use serde::Serialize;

use crate::linalg::dot;
use crate::oracle::{log_cosh, ScalarField};
use crate::{Error, Result};

/// Constant skew-symmetric matrix, stored row-major. Built from its strictly
/// upper triangle so `W + W^T = 0` holds exactly in floating point.
#[derive(Debug, Clone, PartialEq)]
pub struct SkewGenerator {
    dim: usize,
    mat: Vec<f64>,
}

impl SkewGenerator {
    /// General constructor: `upper` lists the strictly-upper-triangular
    /// entries row by row, length d(d-1)/2.
    pub fn from_upper(dim: usize, upper: &[f64]) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidInput("skew generator needs dim >= 1".into()));
        }
        let expect = dim * (dim - 1) / 2;
        if upper.len() != expect {
            return Err(Error::InvalidInput(format!(
                "skew generator for d={dim} needs {expect} upper-triangular entries, got {}",
                upper.len()
            )));
        }
        if upper.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput(
                "skew generator entries must be finite".into(),
            ));
        }
        let mut mat = vec![0.0; dim * dim];
        let mut k = 0;
        for i in 0..dim {
            for j in (i + 1)..dim {
                mat[i * dim + j] = upper[k];
                mat[j * dim + i] = -upper[k];
                k += 1;
            }
        }
        Ok(Self { dim, mat })
    }

    /// The 2-D default: orientation +1 gives [[0, 1], [-1, 0]] (counter-
    /// clockwise tangent for a field decreasing outward), -1 its transpose.
    pub fn standard_2d(orientation: i8) -> Result<Self> {
        match orientation {
            1 => Self::from_upper(2, &[1.0]),
            -1 => Self::from_upper(2, &[-1.0]),
            other => Err(Error::InvalidInput(format!(
                "w_orientation must be 1 or -1, got {other}"
            ))),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn matrix(&self) -> &[f64] {
        &self.mat
    }

    /// Fault-injection copy: adds `eps` to entry (0,1) only, deliberately
    /// breaking skew-symmetry. Exists so verification can demonstrate that the
    /// orthogonality check actually fails on a corrupted generator.
    pub fn tampered(&self, eps: f64) -> Self {
        let mut out = self.clone();
        if self.dim >= 2 {
            out.mat[1] += eps;
        }
        out
    }

    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: v.len(),
                context: "skew generator apply".into(),
            });
        }
        Ok((0..self.dim)
            .map(|i| dot(&self.mat[i * self.dim..(i + 1) * self.dim], v))
            .collect())
    }

    /// Max |W + W^T| entry; zero for an untampered generator.
    pub fn skew_defect(&self) -> f64 {
        let d = self.dim;
        let mut worst = 0.0_f64;
        for i in 0..d {
            for j in 0..d {
                worst = worst.max((self.mat[i * d + j] + self.mat[j * d + i]).abs());
            }
        }
        worst
    }
}

/// Parameters of the shaping reward and the baseline safety penalty.
#[derive(Debug, Clone)]
pub struct ShapingConfig {
    /// Target uncertainty level defining the manifold {U = u_mid}.
    pub u_mid: f64,
    pub w: SkewGenerator,
    /// Scale on the gradient-alignment term. Default 1; the theorem checks
    /// assume 1.
    pub c_grad: f64,
    /// Scale on the rotational term. Default 1.
    pub c_rot: f64,
    /// Baseline safety penalty weight; much greater than 1 for baseline runs.
    pub lambda_unsafe: f64,
    /// Slack above u_mid before the baseline penalty triggers.
    pub eps_unsafe: f64,
}

impl ShapingConfig {
    pub fn new(
        u_mid: f64,
        w: SkewGenerator,
        c_grad: f64,
        c_rot: f64,
        lambda_unsafe: f64,
        eps_unsafe: f64,
    ) -> Result<Self> {
        for (name, v) in [
            ("c_grad", c_grad),
            ("c_rot", c_rot),
            ("lambda_unsafe", lambda_unsafe),
            ("eps_unsafe", eps_unsafe),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::InvalidConfig(format!(
                    "shaping.{name} must be finite and >= 0, got {v}"
                )));
            }
        }
        if !u_mid.is_finite() {
            return Err(Error::InvalidConfig("shaping.u_mid must be finite".into()));
        }
        Ok(Self {
            u_mid,
            w,
            c_grad,
            c_rot,
            lambda_unsafe,
            eps_unsafe,
        })
    }

    /// 2-D defaults: standard W, unit scales, penalty weight 100, slack 0.1.
    pub fn standard(u_mid: f64) -> Self {
        Self {
            u_mid,
            w: SkewGenerator::standard_2d(1).expect("orientation 1 is valid"),
            c_grad: 1.0,
            c_rot: 1.0,
            lambda_unsafe: 100.0,
            eps_unsafe: 0.1,
        }
    }
}

/// alpha(u) = sign(u_mid - u) * tanh(|u - u_mid|), with sign(0) := 0.
///
/// Mathematically equal to tanh(u_mid - u); written in sign/magnitude form so
/// that antisymmetry about u_mid is exact in floating point.
pub fn alpha(cfg: &ShapingConfig, u_s: f64) -> f64 {
    let d = cfg.u_mid - u_s;
    if d == 0.0 {
        0.0
    } else {
        d.signum() * d.abs().tanh()
    }
}

/// beta(u) = 1 - |tanh(u - u_mid)|; in (0, 1], peaks at 1 on the manifold.
pub fn beta(cfg: &ShapingConfig, u_s: f64) -> f64 {
    1.0 - (u_s - cfg.u_mid).abs().tanh()
}

/// W applied to the field gradient; orthogonal to the gradient by skewness.
pub fn rotational_field(cfg: &ShapingConfig, grad_u: &[f64]) -> Result<Vec<f64>> {
    cfg.w.apply(grad_u)
}

/// Shaped reward split into its two terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ShapingTerms {
    pub total: f64,
    pub grad_term: f64,
    pub rot_term: f64,
}

pub fn shaping_reward(
    cfg: &ShapingConfig,
    field: &impl ScalarField,
    s: &[f64],
    s_next: &[f64],
) -> Result<ShapingTerms> {
    if s_next.len() != s.len() {
        return Err(Error::DimensionMismatch {
            expected: s.len(),
            got: s_next.len(),
            context: "shaping_reward s_next".into(),
        });
    }
    let u_s = field.value(s)?;
    let g = field.gradient(s)?;
    let delta: Vec<f64> = s_next.iter().zip(s).map(|(b, a)| b - a).collect();
    let grad_term = cfg.c_grad * alpha(cfg, u_s) * dot(&g, &delta);
    let rot_term = cfg.c_rot * beta(cfg, u_s) * dot(&cfg.w.apply(&g)?, &delta);
    Ok(ShapingTerms {
        total: grad_term + rot_term,
        grad_term,
        rot_term,
    })
}

/// Potential of the level distance: psi(u) = log cosh(u - u_mid). Even, zero
/// exactly on the manifold, numerically stable for large |u - u_mid|.
pub fn psi(cfg: &ShapingConfig, u_s: f64) -> f64 {
    log_cosh(u_s - cfg.u_mid)
}

/// Second-order remainder of the potential identity for one transition:
///
/// ```text
/// eps = alpha(U(s)) <grad U(s), d> + (psi(U(s')) - psi(U(s)))
/// ```
///
/// The gradient term enters unscaled (the identity is stated for c_grad = 1);
/// |eps| is bounded by (L_psi / 2) ||d||^2 for any C2 field.
pub fn decomposition_residual(
    cfg: &ShapingConfig,
    field: &impl ScalarField,
    s: &[f64],
    s_next: &[f64],
) -> Result<f64> {
    if s_next.len() != s.len() {
        return Err(Error::DimensionMismatch {
            expected: s.len(),
            got: s_next.len(),
            context: "decomposition_residual s_next".into(),
        });
    }
    let u_s = field.value(s)?;
    let u_next = field.value(s_next)?;
    let g = field.gradient(s)?;
    let delta: Vec<f64> = s_next.iter().zip(s).map(|(b, a)| b - a).collect();
    Ok(alpha(cfg, u_s) * dot(&g, &delta) + (psi(cfg, u_next) - psi(cfg, u_s)))
}

/// Purely state-based intrinsic reward with a safety penalty:
/// U(s') - lambda_unsafe * [U(s') > u_mid + eps_unsafe] (strict inequality;
/// the boundary value itself is not penalised).
pub fn baseline_reward(cfg: &ShapingConfig, field: &impl ScalarField, s_next: &[f64]) -> Result<f64> {
    let u_next = field.value(s_next)?;
    let penalty = if u_next > cfg.u_mid + cfg.eps_unsafe {
        cfg.lambda_unsafe
    } else {
        0.0
    };
    Ok(u_next - penalty)
}

/// Accumulated unscaled gradient and rotational terms around a closed polygon.
///
/// The loop must repeat its first point at the end (exact equality). For a
/// loop on the level set the gradient sum vanishes under refinement while the
/// rotational sum stays bounded away from zero for a consistent orientation.
pub fn closed_loop_integrals(
    cfg: &ShapingConfig,
    field: &impl ScalarField,
    loop_points: &[Vec<f64>],
) -> Result<(f64, f64)> {
    let first = loop_points
        .first()
        .ok_or_else(|| Error::InvalidInput("closed loop needs at least one point".into()))?;
    let last = loop_points.last().expect("nonempty checked above");
    if first != last {
        return Err(Error::InvalidInput(
            "loop is not closed: last point must equal the first exactly".into(),
        ));
    }
    let mut grad_sum = 0.0;
    let mut rot_sum = 0.0;
    for seg in loop_points.windows(2) {
        let (s, s_next) = (&seg[0], &seg[1]);
        let u_s = field.value(s)?;
        let g = field.gradient(s)?;
        let delta: Vec<f64> = s_next.iter().zip(s.iter()).map(|(b, a)| b - a).collect();
        grad_sum += alpha(cfg, u_s) * dot(&g, &delta);
        rot_sum += beta(cfg, u_s) * dot(&cfg.w.apply(&g)?, &delta);
    }
    Ok((grad_sum, rot_sum))
}

/// Linear scalar field `U(s) = <g, s> + offset`. Zero Hessian, so the
/// decomposition residual reduces to pure tanh curvature; used as an analytic
/// test double alongside the Gaussian-bump field.
#[derive(Debug, Clone)]
pub struct LinearField {
    pub g: Vec<f64>,
    pub offset: f64,
}

impl ScalarField for LinearField {
    fn dim(&self) -> usize {
        self.g.len()
    }

    fn value(&self, s: &[f64]) -> Result<f64> {
        self.check_dim(s, "linear field value")?;
        Ok(dot(&self.g, s) + self.offset)
    }

    fn gradient(&self, s: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(s, "linear field gradient")?;
        Ok(self.g.clone())
    }

    fn hessian(&self, s: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(s, "linear field hessian")?;
        Ok(vec![0.0; self.dim() * self.dim()])
    }
}

/// Vertices of a circle about `center`, counter-clockwise, with the first
/// point repeated at the end so the loop closes exactly.
pub fn circle_loop(center: &[f64; 2], radius: f64, n: usize) -> Vec<Vec<f64>> {
    let mut pts: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let phi = 2.0 * std::f64::consts::PI * (i as f64) / (n as f64);
            vec![center[0] + radius * phi.cos(), center[1] + radius * phi.sin()]
        })
        .collect();
    pts.push(pts[0].clone());
    pts
}
