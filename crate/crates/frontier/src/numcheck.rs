//! Finite-difference utilities shared by oracle and network gradient checks.

/// Relative error with an absolute floor so near-zero pairs compare sanely.
pub fn relative_error(numeric: f64, analytic: f64) -> f64 {
    let denom = (numeric.abs() + analytic.abs()).max(1e-8);
    (numeric - analytic).abs() / denom
}

/// Central-difference gradient of a scalar function of a point.
pub fn fd_gradient<F: FnMut(&[f64]) -> f64>(mut f: F, x: &[f64], h: f64) -> Vec<f64> {
    let mut g = vec![0.0; x.len()];
    let mut xp = x.to_vec();
    for i in 0..x.len() {
        let orig = xp[i];
        xp[i] = orig + h;
        let fp = f(&xp);
        xp[i] = orig - h;
        let fm = f(&xp);
        xp[i] = orig;
        g[i] = (fp - fm) / (2.0 * h);
    }
    g
}

/// Central-difference Hessian of a scalar function, symmetrised.
pub fn fd_hessian<F: FnMut(&[f64]) -> f64>(mut f: F, x: &[f64], h: f64) -> Vec<f64> {
    let d = x.len();
    let mut hess = vec![0.0; d * d];
    let mut xp = x.to_vec();
    let f0 = f(&xp);
    for i in 0..d {
        for j in i..d {
            let v = if i == j {
                let oi = xp[i];
                xp[i] = oi + h;
                let fp = f(&xp);
                xp[i] = oi - h;
                let fm = f(&xp);
                xp[i] = oi;
                (fp - 2.0 * f0 + fm) / (h * h)
            } else {
                let (oi, oj) = (xp[i], xp[j]);
                xp[i] = oi + h;
                xp[j] = oj + h;
                let fpp = f(&xp);
                xp[j] = oj - h;
                let fpm = f(&xp);
                xp[i] = oi - h;
                let fmm = f(&xp);
                xp[j] = oj + h;
                let fmp = f(&xp);
                xp[i] = oi;
                xp[j] = oj;
                (fpp - fpm - fmp + fmm) / (4.0 * h * h)
            };
            hess[i * d + j] = v;
            hess[j * d + i] = v;
        }
    }
    hess
}

/// Max elementwise relative error between two equally sized slices.
pub fn max_relative_error(numeric: &[f64], analytic: &[f64]) -> f64 {
    assert_eq!(numeric.len(), analytic.len());
    numeric
        .iter()
        .zip(analytic)
        .map(|(n, a)| relative_error(*n, *a))
        .fold(0.0, f64::max)
}

/// Worst absolute error scaled by the analytic vector's largest entry.
///
/// Per-component relative error is meaningless for entries that are tiny
/// compared to the vector (central differences there are pure roundoff), so
/// derivative checks compare against the object's own scale; `floor` guards
/// plateau regions where the whole vector is numerically zero.
pub fn scaled_max_error(numeric: &[f64], analytic: &[f64], floor: f64) -> f64 {
    assert_eq!(numeric.len(), analytic.len());
    let scale = analytic
        .iter()
        .fold(floor, |m, a| m.max(a.abs()));
    numeric
        .iter()
        .zip(analytic)
        .map(|(n, a)| (n - a).abs())
        .fold(0.0, f64::max)
        / scale
}
