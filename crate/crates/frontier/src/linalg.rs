//! Tiny dense linear algebra helpers for low-dimensional state math.
//!
//! Matrices are row-major `Vec<f64>` of length `d * d`. Everything here is
//! dimension-generic even though the shipped environment is 2-D.

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub fn scale(a: &[f64], k: f64) -> Vec<f64> {
    a.iter().map(|x| x * k).collect()
}

/// `m` is row-major `d x d`.
pub fn matvec(m: &[f64], v: &[f64]) -> Vec<f64> {
    let d = v.len();
    debug_assert_eq!(m.len(), d * d);
    (0..d).map(|i| dot(&m[i * d..(i + 1) * d], v)).collect()
}

/// Spectral norm (largest |eigenvalue|) of a symmetric row-major `d x d`
/// matrix. Uses closed forms for d <= 2 and cyclic Jacobi sweeps above that.
pub fn sym_opnorm(m: &[f64], d: usize) -> f64 {
    assert_eq!(m.len(), d * d, "matrix size must be d*d");
    match d {
        0 => 0.0,
        1 => m[0].abs(),
        2 => {
            // Eigenvalues of [[a, b], [b, c]]: (a+c)/2 +- sqrt(((a-c)/2)^2 + b^2).
            let (a, b, c) = (m[0], m[1], m[3]);
            let half_tr = 0.5 * (a + c);
            let disc = (0.5 * (a - c)).hypot(b);
            (half_tr + disc).abs().max((half_tr - disc).abs())
        }
        _ => jacobi_eigen_opnorm(m, d),
    }
}

fn jacobi_eigen_opnorm(m: &[f64], d: usize) -> f64 {
    let mut a = m.to_vec();
    // Cyclic Jacobi: annihilate each off-diagonal pair until convergence.
    for _sweep in 0..100 {
        let mut off = 0.0;
        for p in 0..d {
            for q in (p + 1)..d {
                off += a[p * d + q] * a[p * d + q];
            }
        }
        if off.sqrt() < 1e-14 {
            break;
        }
        for p in 0..d {
            for q in (p + 1)..d {
                let apq = a[p * d + q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let app = a[p * d + p];
                let aqq = a[q * d + q];
                let theta = 0.5 * (aqq - app) / apq;
                // Stable tangent of the rotation angle.
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..d {
                    let akp = a[k * d + p];
                    let akq = a[k * d + q];
                    a[k * d + p] = c * akp - s * akq;
                    a[k * d + q] = s * akp + c * akq;
                }
                for k in 0..d {
                    let apk = a[p * d + k];
                    let aqk = a[q * d + k];
                    a[p * d + k] = c * apk - s * aqk;
                    a[q * d + k] = s * apk + c * aqk;
                }
            }
        }
    }
    (0..d).map(|i| a[i * d + i].abs()).fold(0.0, f64::max)
}
