//! Coefficient fields of the degenerate system
//!
//! ```text
//! dX_t = b(X_t, Y_t) dt + σ(X_t, Y_t) dW_t,   dY_t = X_t dt
//! ```
//!
//! together with sampled checks of the boundedness, ellipticity and Hölder
//! assumptions, and the perturbation norms that govern density stability.

mod assumptions;
mod norms;
mod registry;

pub use assumptions::{verify_assumptions, AssumptionCheck, AssumptionReport};
pub use norms::{
    holder_seminorm_estimate, lq_norm_estimate, perturbation_norms, sup_norm_estimate, NormSampling, PerturbationNorms,
    PerturbationPair, QIndex,
};
pub use registry::{DiffusionSpec, DriftSpec, FieldSpec, PerturbationFamily};

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::fmt_point;

/// A state `(x, y)` of the non-degenerate / degenerate pair in `R^d × R^d`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPoint", into = "RawPoint")]
pub struct PhasePoint {
    x: Vec<f64>,
    y: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawPoint {
    x: Vec<f64>,
    y: Vec<f64>,
}

impl TryFrom<RawPoint> for PhasePoint {
    type Error = Error;
    fn try_from(raw: RawPoint) -> Result<Self> {
        PhasePoint::new(raw.x, raw.y)
    }
}

impl From<PhasePoint> for RawPoint {
    fn from(p: PhasePoint) -> Self {
        RawPoint { x: p.x, y: p.y }
    }
}

impl PhasePoint {
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        if x.is_empty() {
            return Err(Error::invalid("point", "dimension must be at least 1"));
        }
        if x.len() != y.len() {
            return Err(Error::invalid(
                "point",
                format!("x has length {} but y has length {}", x.len(), y.len()),
            ));
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("point", "entries must be finite"));
        }
        Ok(PhasePoint { x, y })
    }

    /// One-dimensional convenience constructor. Panics on non-finite input.
    pub fn scalar(x: f64, y: f64) -> Self {
        PhasePoint::new(vec![x], vec![y]).expect("finite scalar point")
    }

    pub fn origin(d: usize) -> Self {
        PhasePoint {
            x: vec![0.0; d],
            y: vec![0.0; d],
        }
    }

    /// Builds a point from a stacked `(x, y)` slice of length `2d`.
    pub fn from_stacked(v: &[f64]) -> Result<Self> {
        if !v.len().is_multiple_of(2) {
            return Err(Error::invalid("point", "stacked length must be even"));
        }
        let d = v.len() / 2;
        PhasePoint::new(v[..d].to_vec(), v[d..].to_vec())
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn stacked(&self) -> Vec<f64> {
        let mut v = self.x.clone();
        v.extend_from_slice(&self.y);
        v
    }

    /// The additive distance `|x − x'| + |y − y'|` used by the Hölder condition.
    pub fn additive_distance(&self, other: &PhasePoint) -> f64 {
        let dx: f64 = self.x.iter().zip(&other.x).map(|(a, b)| (a - b) * (a - b)).sum();
        let dy: f64 = self.y.iter().zip(&other.y).map(|(a, b)| (a - b) * (a - b)).sum();
        dx.sqrt() + dy.sqrt()
    }
}

impl fmt::Display for PhasePoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "x={} y={}", fmt_point(&self.x), fmt_point(&self.y))
    }
}

/// Evaluator signature for coefficient functions: `(x, y, out)`. Drifts write
/// `d` entries, diffusions write a row-major `d × d` matrix.
pub type Evaluator = dyn Fn(&[f64], &[f64], &mut [f64]) + Send + Sync;

/// Declared regularity metadata: Hölder exponent and constant, sup bounds of
/// drift and diffusion, ellipticity constant.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegularityConstants {
    pub gamma: f64,
    pub kappa: f64,
    pub k1: f64,
    pub k2: f64,
    pub lambda: f64,
}

impl RegularityConstants {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::invalid(
                "gamma",
                format!("must lie in (0, 1], got {}", self.gamma),
            ));
        }
        if !(self.kappa >= 0.0 && self.kappa.is_finite()) {
            return Err(Error::invalid(
                "kappa",
                format!("must be finite and nonnegative, got {}", self.kappa),
            ));
        }
        if !(self.k1 >= 0.0 && self.k1.is_finite()) {
            return Err(Error::invalid(
                "k1",
                format!("must be finite and nonnegative, got {}", self.k1),
            ));
        }
        if !(self.k2 > 0.0 && self.k2.is_finite()) {
            return Err(Error::invalid(
                "k2",
                format!("must be finite and positive, got {}", self.k2),
            ));
        }
        if !(self.lambda >= 1.0 && self.lambda.is_finite()) {
            return Err(Error::invalid(
                "lambda",
                format!("must be finite and at least 1, got {}", self.lambda),
            ));
        }
        Ok(())
    }

    /// Constants valid for both fields of a pair.
    pub fn merged(&self, other: &RegularityConstants) -> RegularityConstants {
        RegularityConstants {
            gamma: self.gamma.min(other.gamma),
            kappa: self.kappa.max(other.kappa),
            k1: self.k1.max(other.k1),
            k2: self.k2.max(other.k2),
            lambda: self.lambda.max(other.lambda),
        }
    }
}

/// Drift and diffusion evaluators plus their declared regularity constants.
#[derive(Clone)]
pub struct CoefficientField {
    dim: usize,
    drift: Arc<Evaluator>,
    diffusion: Arc<Evaluator>,
    constants: RegularityConstants,
}

impl fmt::Debug for CoefficientField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CoefficientField")
            .field("dim", &self.dim)
            .field("constants", &self.constants)
            .finish_non_exhaustive()
    }
}

impl CoefficientField {
    pub fn new(
        dim: usize,
        drift: Arc<Evaluator>,
        diffusion: Arc<Evaluator>,
        constants: RegularityConstants,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("dim", "must be at least 1"));
        }
        constants.validate()?;
        Ok(CoefficientField {
            dim,
            drift,
            diffusion,
            constants,
        })
    }

    /// Builds a field from closures.
    pub fn from_fns<B, S>(dim: usize, drift: B, diffusion: S, constants: RegularityConstants) -> Result<Self>
    where
        B: Fn(&[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
        S: Fn(&[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
    {
        CoefficientField::new(dim, Arc::new(drift), Arc::new(diffusion), constants)
    }

    /// Constant drift `b` and diffusion `scale · I`.
    pub fn constant(b: Vec<f64>, scale: f64) -> Result<Self> {
        FieldSpec {
            dim: b.len(),
            drift: DriftSpec::Constant { value: b },
            diffusion: DiffusionSpec::Constant { scale },
            constants: None,
        }
        .build()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn constants(&self) -> &RegularityConstants {
        &self.constants
    }

    pub fn with_constants(mut self, constants: RegularityConstants) -> Result<Self> {
        constants.validate()?;
        self.constants = constants;
        Ok(self)
    }

    pub(crate) fn drift_fn(&self) -> &Arc<Evaluator> {
        &self.drift
    }

    pub(crate) fn diffusion_fn(&self) -> &Arc<Evaluator> {
        &self.diffusion
    }

    #[inline]
    pub fn drift_into(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        (self.drift)(x, y, out)
    }

    #[inline]
    pub fn sigma_into(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        (self.diffusion)(x, y, out)
    }

    /// `a = σσ*` written row-major into `out`; `scratch` holds `σ` (`d²` entries).
    /// Only the upper triangle is computed and mirrored, so the result is
    /// symmetric bit for bit.
    #[inline]
    pub fn a_into(&self, x: &[f64], y: &[f64], scratch: &mut [f64], out: &mut [f64]) {
        let d = self.dim;
        (self.diffusion)(x, y, scratch);
        for i in 0..d {
            for j in i..d {
                let mut s = 0.0;
                for k in 0..d {
                    s += scratch[i * d + k] * scratch[j * d + k];
                }
                out[i * d + j] = s;
                out[j * d + i] = s;
            }
        }
    }

    pub fn drift(&self, p: &PhasePoint) -> Result<DVector<f64>> {
        self.check_dim(p)?;
        let mut out = vec![0.0; self.dim];
        self.drift_into(p.x(), p.y(), &mut out);
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "drift value",
                point: p.to_string(),
            });
        }
        Ok(DVector::from_vec(out))
    }

    pub fn sigma(&self, p: &PhasePoint) -> Result<DMatrix<f64>> {
        self.check_dim(p)?;
        let d = self.dim;
        let mut out = vec![0.0; d * d];
        self.sigma_into(p.x(), p.y(), &mut out);
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "diffusion value",
                point: p.to_string(),
            });
        }
        Ok(DMatrix::from_row_slice(d, d, &out))
    }

    pub(crate) fn check_dim(&self, p: &PhasePoint) -> Result<()> {
        if p.dim() != self.dim {
            return Err(Error::invalid(
                "point",
                format!("dimension {} does not match field dimension {}", p.dim(), self.dim),
            ));
        }
        Ok(())
    }
}

/// `a(p) = σ(p)σ(p)*`, exactly symmetric.
pub fn diffusion_matrix(field: &CoefficientField, p: &PhasePoint) -> Result<DMatrix<f64>> {
    field.check_dim(p)?;
    let d = field.dim();
    let mut scratch = vec![0.0; d * d];
    let mut out = vec![0.0; d * d];
    field.a_into(p.x(), p.y(), &mut scratch, &mut out);
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            what: "diffusion matrix",
            point: p.to_string(),
        });
    }
    Ok(DMatrix::from_row_slice(d, d, &out))
}
