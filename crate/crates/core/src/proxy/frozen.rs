use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::error::{Error, Result};
use crate::model::{CoefficientField, PhasePoint};
use crate::numeric::{cholesky_flat, fmt_point, gauss_legendre_unit, spd_inverse_from_cholesky};

pub const DEFAULT_COVARIANCE_ORDER: usize = 32;
pub const MAX_DERIVATIVE_ORDER: usize = 4;

type Buf = SmallVec<[f64; 8]>;

/// Covariance `C_t` of the frozen Gaussian, frozen at `freeze_point`.
#[derive(Clone, Debug, PartialEq)]
pub struct FrozenCovariance {
    pub t: f64,
    pub freeze_point: PhasePoint,
    pub entries: DMatrix<f64>,
}

pub fn frozen_covariance(field: &CoefficientField, t: f64, freeze: &PhasePoint) -> Result<FrozenCovariance> {
    frozen_covariance_with_order(field, t, freeze, DEFAULT_COVARIANCE_ORDER)
}

/// `C_t = ∫₀ᵗ [[a, τa], [τa, τ²a]](x', y' − x'τ) dτ` by Gauss–Legendre of the given order.
pub fn frozen_covariance_with_order(
    field: &CoefficientField,
    t: f64,
    freeze: &PhasePoint,
    order: usize,
) -> Result<FrozenCovariance> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::invalid("t", format!("must be finite and nonnegative, got {t}")));
    }
    field.check_dim(freeze)?;
    let rule = gauss_legendre_unit(order)?;
    let d = field.dim();
    let mut out = vec![0.0; 4 * d * d];
    covariance_into(field, t, freeze.x(), freeze.y(), &rule, &mut out)?;
    Ok(FrozenCovariance {
        t,
        freeze_point: freeze.clone(),
        entries: DMatrix::from_row_slice(2 * d, 2 * d, &out),
    })
}

/// Row-major `2d × 2d` covariance written into `out`; `rule` lives on `[0, 1]`.
pub(crate) fn covariance_into(
    field: &CoefficientField,
    t: f64,
    xp: &[f64],
    yp: &[f64],
    rule: &[(f64, f64)],
    out: &mut [f64],
) -> Result<()> {
    let d = xp.len();
    let n = 2 * d;
    out.fill(0.0);
    if t == 0.0 {
        return Ok(());
    }
    let mut z = vec![0.0; d];
    let mut scratch = vec![0.0; d * d];
    let mut a = vec![0.0; d * d];
    for &(node, weight) in rule {
        let tau = t * node;
        let w = t * weight;
        for i in 0..d {
            z[i] = yp[i] - xp[i] * tau;
        }
        field.a_into(xp, &z, &mut scratch, &mut a);
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::Quadrature {
                u: t - tau,
                point: format!("x={} y={}", fmt_point(xp), fmt_point(&z)),
            });
        }
        for i in 0..d {
            for j in 0..d {
                let v = w * a[i * d + j];
                out[i * n + j] += v;
                out[i * n + d + j] += tau * v;
                out[(d + i) * n + j] += tau * v;
                out[(d + i) * n + d + j] += tau * tau * v;
            }
        }
    }
    // bit-level symmetry
    for i in 0..n {
        for j in 0..i {
            let s = 0.5 * (out[i * n + j] + out[j * n + i]);
            out[i * n + j] = s;
            out[j * n + i] = s;
        }
    }
    Ok(())
}

/// The frozen Gaussian `p̃(t, ·, ξ')` with covariance and precision
/// precomputed, as a function of the start point.
#[derive(Clone, Debug)]
pub struct FrozenGaussian {
    t: f64,
    d: usize,
    terminal: Vec<f64>,
    cov: Vec<f64>,
    precision: Vec<f64>,
    /// `u_iᵀ P u_j` for the x-directions `u_i = R_t e_{x_i}`.
    x_precision: Vec<f64>,
    log_norm: f64,
}

impl FrozenGaussian {
    /// Freezes the diffusion along the transport of `terminal`.
    pub fn new(field: &CoefficientField, t: f64, terminal: &PhasePoint, order: usize) -> Result<Self> {
        if !(t > 0.0 && t.is_finite()) {
            return Err(Error::invalid("t", format!("must be positive and finite, got {t}")));
        }
        let cov = frozen_covariance_with_order(field, t, terminal, order)?;
        let flat: Vec<f64> = (0..cov.entries.nrows())
            .flat_map(|i| cov.entries.row(i).iter().copied().collect::<Vec<_>>())
            .collect();
        FrozenGaussian::from_covariance(t, terminal.stacked(), flat)
    }

    /// Freezes at a stacked terminal point with a prebuilt rule on `[0, 1]`.
    pub(crate) fn build(field: &CoefficientField, t: f64, terminal: &[f64], rule: &[(f64, f64)]) -> Result<Self> {
        let d = field.dim();
        let mut cov = vec![0.0; 4 * d * d];
        covariance_into(field, t, &terminal[..d], &terminal[d..], rule, &mut cov)?;
        FrozenGaussian::from_covariance(t, terminal.to_vec(), cov)
    }

    /// From a row-major covariance and a stacked terminal point.
    pub fn from_covariance(t: f64, terminal: Vec<f64>, cov: Vec<f64>) -> Result<Self> {
        let n = terminal.len();
        let d = n / 2;
        if n == 0 || !n.is_multiple_of(2) || cov.len() != n * n {
            return Err(Error::invalid("covariance", "shape does not match the terminal point"));
        }
        let mut l = vec![0.0; n * n];
        if !cholesky_flat(&cov, n, &mut l) {
            return Err(Error::SingularCovariance {
                t,
                point: format!("x={} y={}", fmt_point(&terminal[..d]), fmt_point(&terminal[d..])),
            });
        }
        let mut precision = vec![0.0; n * n];
        spd_inverse_from_cholesky(&l, n, &mut precision);
        let log_det: f64 = (0..n).map(|i| 2.0 * l[i * n + i].ln()).sum();
        let log_norm = -(d as f64) * (2.0 * std::f64::consts::PI).ln() - 0.5 * log_det;
        let mut x_precision = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                x_precision[i * d + j] = precision[i * n + j]
                    + t * (precision[i * n + d + j] + precision[(d + i) * n + j])
                    + t * t * precision[(d + i) * n + d + j];
            }
        }
        Ok(FrozenGaussian {
            t,
            d,
            terminal,
            cov,
            precision,
            x_precision,
            log_norm,
        })
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(2 * self.d, 2 * self.d, &self.cov)
    }

    pub fn precision(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(2 * self.d, 2 * self.d, &self.precision)
    }

    /// Returns `φ` and fills `g = P (R_t ξ − ξ')`.
    #[inline]
    fn core(&self, x: &[f64], y: &[f64], g: &mut Buf) -> f64 {
        let d = self.d;
        let n = 2 * d;
        let mut v: Buf = SmallVec::from_elem(0.0, n);
        for i in 0..d {
            v[i] = x[i] - self.terminal[i];
            v[d + i] = y[i] + self.t * x[i] - self.terminal[d + i];
        }
        g.clear();
        g.resize(n, 0.0);
        let mut quad = 0.0;
        for i in 0..n {
            let mut s = 0.0;
            for j in 0..n {
                s += self.precision[i * n + j] * v[j];
            }
            g[i] = s;
            quad += s * v[i];
        }
        (self.log_norm - 0.5 * quad).exp()
    }

    /// Density at the start point `(x, y)`.
    #[inline]
    pub fn density_raw(&self, x: &[f64], y: &[f64]) -> f64 {
        let mut g = Buf::new();
        self.core(x, y, &mut g)
    }

    pub fn density(&self, from: &PhasePoint) -> f64 {
        self.density_raw(from.x(), from.y())
    }

    /// Density with its gradient and Hessian in the start's `x` component
    /// (`grad` has `d` entries, `hess` is row-major `d × d`).
    #[inline]
    pub fn x_jet(&self, x: &[f64], y: &[f64], grad: &mut [f64], hess: &mut [f64]) -> f64 {
        let d = self.d;
        let mut g = Buf::new();
        let phi = self.core(x, y, &mut g);
        let mut s: Buf = SmallVec::from_elem(0.0, d);
        for i in 0..d {
            s[i] = -(g[i] + self.t * g[d + i]);
            grad[i] = s[i] * phi;
        }
        for i in 0..d {
            for j in 0..d {
                hess[i * d + j] = (s[i] * s[j] - self.x_precision[i * d + j]) * phi;
            }
        }
        phi
    }

    /// Mixed derivative of the density in the start point along the given
    /// stacked directions (at most four).
    pub fn directional_derivative(&self, x: &[f64], y: &[f64], dirs: &[Vec<f64>]) -> Result<f64> {
        let k = dirs.len();
        if k > MAX_DERIVATIVE_ORDER {
            return Err(Error::invalid(
                "alpha",
                format!("order {k} exceeds {MAX_DERIVATIVE_ORDER}"),
            ));
        }
        let n = 2 * self.d;
        if dirs.iter().any(|u| u.len() != n) {
            return Err(Error::invalid("direction", format!("expected length {n}")));
        }
        let mut g = Buf::new();
        let phi = self.core(x, y, &mut g);
        // directions act on the start point through R_t
        let u: Vec<Vec<f64>> = dirs
            .iter()
            .map(|dir| {
                let mut w = dir.clone();
                for i in 0..self.d {
                    w[self.d + i] += self.t * dir[i];
                }
                w
            })
            .collect();
        let lin: Vec<f64> = u
            .iter()
            .map(|ui| -ui.iter().zip(g.iter()).map(|(a, b)| a * b).sum::<f64>())
            .collect();
        let mut pair = [[0.0; MAX_DERIVATIVE_ORDER]; MAX_DERIVATIVE_ORDER];
        for i in 0..k {
            for j in 0..k {
                let mut s = 0.0;
                for a in 0..n {
                    for b in 0..n {
                        s += u[i][a] * self.precision[a * n + b] * u[j][b];
                    }
                }
                pair[i][j] = s;
            }
        }
        Ok(phi * matching_sum((1u32 << k) - 1, &lin, &pair))
    }
}

/// Sum over partial matchings of the index set `mask`: paired indices
/// contribute `−P(u_i, u_j)`, unpaired ones `−⟨g, u_i⟩`.
fn matching_sum(mask: u32, lin: &[f64], pair: &[[f64; MAX_DERIVATIVE_ORDER]; MAX_DERIVATIVE_ORDER]) -> f64 {
    if mask == 0 {
        return 1.0;
    }
    let i = mask.trailing_zeros() as usize;
    let rest = mask & !(1 << i);
    let mut total = lin[i] * matching_sum(rest, lin, pair);
    let mut m = rest;
    while m != 0 {
        let j = m.trailing_zeros() as usize;
        m &= !(1 << j);
        total -= pair[i][j] * matching_sum(rest & !(1 << j), lin, pair);
    }
    total
}

/// Frozen density `p̃(t, from, to)`, frozen at the terminal point `to`.
pub fn frozen_density(field: &CoefficientField, t: f64, from: &PhasePoint, to: &PhasePoint) -> Result<f64> {
    field.check_dim(from)?;
    let g = FrozenGaussian::new(field, t, to, DEFAULT_COVARIANCE_ORDER)?;
    Ok(g.density(from))
}

/// Multi-index on the start point: `x[i]` derivatives in `x_i`, `y[i]` in `y_i`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MultiIndex {
    pub x: Vec<u32>,
    pub y: Vec<u32>,
}

impl MultiIndex {
    pub fn new(x: Vec<u32>, y: Vec<u32>) -> Result<Self> {
        if x.len() != y.len() || x.is_empty() {
            return Err(Error::invalid(
                "alpha",
                "x and y parts must have the same positive length",
            ));
        }
        let m = MultiIndex { x, y };
        if m.order() > MAX_DERIVATIVE_ORDER {
            return Err(Error::invalid(
                "alpha",
                format!("order {} exceeds {MAX_DERIVATIVE_ORDER}", m.order()),
            ));
        }
        Ok(m)
    }

    pub fn order_x(&self) -> usize {
        self.x.iter().map(|&a| a as usize).sum()
    }

    pub fn order_y(&self) -> usize {
        self.y.iter().map(|&a| a as usize).sum()
    }

    pub fn order(&self) -> usize {
        self.order_x() + self.order_y()
    }

    /// Time scaling exponent `|α_x|/2 + 3|α_y|/2`.
    pub fn scaling_exponent(&self) -> f64 {
        0.5 * self.order_x() as f64 + 1.5 * self.order_y() as f64
    }

    /// Unit directions in stacked coordinates, one per derivative.
    pub fn directions(&self) -> Vec<Vec<f64>> {
        let d = self.x.len();
        let mut dirs = Vec::new();
        for (offset, counts) in [(0, &self.x), (d, &self.y)] {
            for (i, &c) in counts.iter().enumerate() {
                for _ in 0..c {
                    let mut e = vec![0.0; 2 * d];
                    e[offset + i] = 1.0;
                    dirs.push(e);
                }
            }
        }
        dirs
    }
}

/// `D^α` of `p̃(t, ·, to)` at `from`, differentiating in the start point with
/// the freeze point held at `to`.
pub fn frozen_density_derivative(
    field: &CoefficientField,
    t: f64,
    from: &PhasePoint,
    to: &PhasePoint,
    alpha: &MultiIndex,
) -> Result<f64> {
    if alpha.order() > MAX_DERIVATIVE_ORDER {
        return Err(Error::invalid(
            "alpha",
            format!("order {} exceeds {MAX_DERIVATIVE_ORDER}", alpha.order()),
        ));
    }
    field.check_dim(from)?;
    if alpha.x.len() != field.dim() {
        return Err(Error::invalid("alpha", "dimension does not match the field"));
    }
    let g = FrozenGaussian::new(field, t, to, DEFAULT_COVARIANCE_ORDER)?;
    g.directional_derivative(from.x(), from.y(), &alpha.directions())
}
