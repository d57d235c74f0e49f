//! Gaussian machinery: the Kolmogorov proxy density, the resolvent group of
//! the linear transport, and the frozen Gaussian with its derivatives.

mod frozen;

pub use frozen::{
    frozen_covariance, frozen_covariance_with_order, frozen_density, frozen_density_derivative, FrozenCovariance,
    FrozenGaussian, MultiIndex, DEFAULT_COVARIANCE_ORDER, MAX_DERIVATIVE_ORDER,
};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::PhasePoint;

/// Concentration constant `c` and dimension of the proxy `p̂_c`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProxyParams {
    pub c: f64,
    pub d: usize,
}

impl ProxyParams {
    pub fn new(c: f64, d: usize) -> Result<Self> {
        let p = ProxyParams { c, d };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(Error::invalid(
                "c",
                format!("must be positive and finite, got {}", self.c),
            ));
        }
        if self.d == 0 {
            return Err(Error::invalid("d", "must be at least 1"));
        }
        Ok(())
    }
}

/// Kolmogorov Gaussian `p̂_c(t, (x, y), (x', y'))`: the transition density of
/// `dX = √(2/c) dW, dY = X dt`.
pub fn kolmogorov_proxy_density(params: ProxyParams, t: f64, from: &PhasePoint, to: &PhasePoint) -> Result<f64> {
    params.validate()?;
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::invalid("t", format!("must be positive and finite, got {t}")));
    }
    if from.dim() != params.d || to.dim() != params.d {
        return Err(Error::invalid("point", format!("expected dimension {}", params.d)));
    }
    Ok(proxy_density_raw(params.c, t, from.x(), from.y(), to.x(), to.y()))
}

/// Unchecked proxy density on raw slices.
#[inline]
pub(crate) fn proxy_density_raw(c: f64, t: f64, x: &[f64], y: &[f64], xp: &[f64], yp: &[f64]) -> f64 {
    let d = x.len() as f64;
    let mut qx = 0.0;
    let mut qy = 0.0;
    for i in 0..x.len() {
        let dx = xp[i] - x[i];
        let dy = yp[i] - y[i] - 0.5 * (x[i] + xp[i]) * t;
        qx += dx * dx;
        qy += dy * dy;
    }
    let log_norm = d * (c.ln() + 0.5 * 3f64.ln() - (2.0 * std::f64::consts::PI * t * t).ln());
    (log_norm - c * (qx / (4.0 * t) + 3.0 * qy / (t * t * t))).exp()
}

/// The block matrix `R_s = [[I, 0], [sI, I]]` acting on stacked `(x, y)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ResolventMatrix {
    pub s: f64,
    pub d: usize,
}

pub fn resolvent(s: f64, d: usize) -> Result<ResolventMatrix> {
    if !s.is_finite() {
        return Err(Error::invalid("s", "must be finite"));
    }
    if d == 0 {
        return Err(Error::invalid("d", "must be at least 1"));
    }
    Ok(ResolventMatrix { s, d })
}

impl ResolventMatrix {
    pub fn matrix(&self) -> DMatrix<f64> {
        let n = 2 * self.d;
        let mut m = DMatrix::identity(n, n);
        for i in 0..self.d {
            m[(self.d + i, i)] = self.s;
        }
        m
    }

    /// `R_s (x, y) = (x, y + s x)`.
    pub fn apply(&self, p: &PhasePoint) -> PhasePoint {
        let y: Vec<f64> = p.y().iter().zip(p.x()).map(|(y, x)| y + self.s * x).collect();
        PhasePoint::new(p.x().to_vec(), y).expect("finite image of a finite point")
    }

    pub fn compose(&self, other: &ResolventMatrix) -> ResolventMatrix {
        ResolventMatrix {
            s: self.s + other.s,
            d: self.d,
        }
    }

    pub fn determinant(&self) -> f64 {
        1.0
    }
}
