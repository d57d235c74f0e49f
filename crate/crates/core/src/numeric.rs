//! Small numerical helpers shared across modules.

use gauss_quad::{GaussHermite, GaussLegendre};
use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Pairwise (cascade) summation. The reduction tree depends only on the
/// slice length, so results do not depend on how the inputs were produced.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const BLOCK: usize = 16;
    if values.len() <= BLOCK {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

/// Operator (spectral) norm. Row or column vectors reduce to the Euclidean norm.
pub fn op_norm(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 1 || m.ncols() == 1 {
        return m.norm();
    }
    let gram = m.transpose() * m;
    let eig = gram.symmetric_eigen();
    eig.eigenvalues.iter().cloned().fold(0.0, f64::max).max(0.0).sqrt()
}

pub fn euclid(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// Lower-triangular Cholesky factor of a dense symmetric row-major `n × n`
/// matrix, written in place into `l` (row-major). Returns `false` when the
/// matrix is not numerically positive definite.
pub fn cholesky_flat(a: &[f64], n: usize, l: &mut [f64]) -> bool {
    for v in l.iter_mut() {
        *v = 0.0;
    }
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if !(s > 0.0) || !s.is_finite() {
                    return false;
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    true
}

/// Inverse of a symmetric positive definite matrix from its Cholesky factor.
pub fn spd_inverse_from_cholesky(l: &[f64], n: usize, inv: &mut [f64]) {
    // Invert L (lower triangular) column by column, then form L^{-T} L^{-1}.
    let mut linv = vec![0.0; n * n];
    for j in 0..n {
        linv[j * n + j] = 1.0 / l[j * n + j];
        for i in (j + 1)..n {
            let mut s = 0.0;
            for k in j..i {
                s -= l[i * n + k] * linv[k * n + j];
            }
            linv[i * n + j] = s / l[i * n + i];
        }
    }
    for i in 0..n {
        for j in 0..=i {
            let mut s = 0.0;
            for k in i..n {
                s += linv[k * n + i] * linv[k * n + j];
            }
            inv[i * n + j] = s;
            inv[j * n + i] = s;
        }
    }
}

/// Gauss–Legendre nodes and weights on `[0, 1]`, sorted by node.
pub fn gauss_legendre_unit(n: usize) -> Result<Vec<(f64, f64)>> {
    match n {
        0 => Err(Error::invalid("order", "Gauss–Legendre order must be at least 1")),
        1 => Ok(vec![(0.5, 1.0)]),
        _ => {
            let rule = GaussLegendre::new(n).map_err(|e| Error::invalid("order", e.to_string()))?;
            let mut v: Vec<(f64, f64)> = rule
                .as_node_weight_pairs()
                .iter()
                .map(|&(x, w)| (0.5 * (x + 1.0), 0.5 * w))
                .collect();
            v.sort_by(|a, b| a.0.total_cmp(&b.0));
            Ok(v)
        }
    }
}

/// Gauss–Hermite rule for the standard normal weight: `Σ w f(x) ≈ E f(Z)`.
pub fn gauss_hermite_normal(n: usize) -> Result<Vec<(f64, f64)>> {
    match n {
        0 => Err(Error::invalid("order", "Gauss–Hermite order must be at least 1")),
        1 => Ok(vec![(0.0, 1.0)]),
        _ => {
            let rule = GaussHermite::new(n).map_err(|e| Error::invalid("order", e.to_string()))?;
            let scale = std::f64::consts::PI.sqrt();
            let mut v: Vec<(f64, f64)> = rule
                .as_node_weight_pairs()
                .iter()
                .map(|&(x, w)| (std::f64::consts::SQRT_2 * x, w / scale))
                .collect();
            v.sort_by(|a, b| a.0.total_cmp(&b.0));
            Ok(v)
        }
    }
}

pub(crate) fn fmt_point(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|a| format!("{a}")).collect();
    format!("({})", parts.join(", "))
}
