use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::model::{diffusion_matrix, CoefficientField, PerturbationPair, PhasePoint};
use crate::parametrix::{parametrix_series, ConvolutionScheme};
use crate::simulate::{kde_at, kde_difference, simulate_terminals, Bandwidth, McConfig};

/// Density method for a stability run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Series,
    MonteCarlo,
    Both,
}

impl Method {
    /// The single methods a run executes, in output order.
    pub fn components(self) -> &'static [Method] {
        match self {
            Method::Series => &[Method::Series],
            Method::MonteCarlo => &[Method::MonteCarlo],
            Method::Both => &[Method::Series, Method::MonteCarlo],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Method::Series => "series",
            Method::MonteCarlo => "monte-carlo",
            Method::Both => "both",
        }
    }
}

/// Method choice with the discretization settings of every method.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MethodConfig {
    pub method: Method,
    /// Series truncation rank.
    pub order: usize,
    pub scheme: ConvolutionScheme,
    pub monte_carlo: McConfig,
}

impl Default for MethodConfig {
    fn default() -> Self {
        MethodConfig {
            method: Method::Series,
            order: 2,
            scheme: ConvolutionScheme::default(),
            monte_carlo: McConfig::default(),
        }
    }
}

impl MethodConfig {
    pub fn validate(&self) -> Result<()> {
        if self.method != Method::MonteCarlo {
            self.scheme.validate()?;
        }
        if self.method != Method::Series {
            self.monte_carlo.validate()?;
        }
        Ok(())
    }
}

/// Exact discretization behind a [`DensityField`]; two fields can only be
/// differenced when these compare equal.
#[derive(Clone, Debug, PartialEq)]
pub enum Discretization {
    Series {
        order: usize,
        scheme: ConvolutionScheme,
        /// Bridge reference matrix per query point.
        references: Vec<Vec<f64>>,
    },
    MonteCarlo {
        config: McConfig,
        bandwidth: Bandwidth,
    },
}

impl Discretization {
    pub fn method(&self) -> Method {
        match self {
            Discretization::Series { .. } => Method::Series,
            Discretization::MonteCarlo { .. } => Method::MonteCarlo,
        }
    }
}

/// Density values of one field at a point set.
#[derive(Clone, Debug)]
pub struct DensityField {
    pub t: f64,
    pub from: PhasePoint,
    pub points: Vec<PhasePoint>,
    pub values: Vec<f64>,
    /// Series values under the halved scheme; empty for Monte Carlo.
    pub coarse: Vec<f64>,
    pub discretization: Discretization,
    samples: Option<Arc<Vec<Vec<f64>>>>,
}

/// Per-point bridge references taken from `field`, unless the scheme fixes one.
pub fn shared_references(
    field: &CoefficientField,
    scheme: &ConvolutionScheme,
    points: &[PhasePoint],
) -> Result<Vec<Vec<f64>>> {
    points
        .iter()
        .map(|p| match &scheme.reference {
            Some(r) => Ok(r.clone()),
            None => Ok(diffusion_matrix(field, p)?.transpose().as_slice().to_vec()),
        })
        .collect()
}

/// Series density of `field` with one bridge reference per point.
pub fn series_density_field(
    field: &CoefficientField,
    t: f64,
    from: &PhasePoint,
    points: &[PhasePoint],
    order: usize,
    scheme: &ConvolutionScheme,
    references: Vec<Vec<f64>>,
) -> Result<DensityField> {
    if references.len() != points.len() {
        return Err(Error::invalid("references", "one reference per point is required"));
    }
    let results: Vec<(f64, f64)> = points
        .par_iter()
        .zip(references.par_iter())
        .map(|(to, r)| {
            let mut s = scheme.clone();
            s.reference = Some(r.clone());
            let res = parametrix_series(field, t, from, to, order, &s)?;
            Ok((res.value, res.coarse_value))
        })
        .collect::<Result<_>>()?;
    Ok(DensityField {
        t,
        from: from.clone(),
        points: points.to_vec(),
        values: results.iter().map(|r| r.0).collect(),
        coarse: results.iter().map(|r| r.1).collect(),
        discretization: Discretization::Series {
            order,
            scheme: scheme.clone(),
            references,
        },
        samples: None,
    })
}

/// Monte Carlo density of `field`; bandwidths come from its own samples
/// unless `bandwidth` is supplied.
pub fn mc_density_field(
    field: &CoefficientField,
    t: f64,
    from: &PhasePoint,
    points: &[PhasePoint],
    config: &McConfig,
    bandwidth: Option<&Bandwidth>,
) -> Result<DensityField> {
    config.validate()?;
    let d = field.dim();
    let samples = simulate_terminals(field, from, t, config.n_steps, config.n_paths, config.seed)?;
    let bandwidth = match bandwidth {
        Some(b) => b.clone(),
        None => {
            let exponent = config.bandwidth_exponent.unwrap_or(1.0 / (2.0 * d as f64 + 4.0));
            Bandwidth::from_samples(&samples, t, exponent)?
        }
    };
    let est = kde_at(&samples, points, &bandwidth, config.truncation)?;
    Ok(DensityField {
        t,
        from: from.clone(),
        points: points.to_vec(),
        values: est.values,
        coarse: Vec::new(),
        discretization: Discretization::MonteCarlo {
            config: config.clone(),
            bandwidth,
        },
        samples: Some(Arc::new(samples)),
    })
}

/// Pointwise difference of two densities on one grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DifferenceGrid {
    pub method: Method,
    pub base: Vec<f64>,
    pub perturbed: Vec<f64>,
    /// `p − p_ε`.
    pub signed: Vec<f64>,
    /// `|p − p_ε|`.
    pub diff: Vec<f64>,
    /// Discretization uncertainty of `signed`: node-halving change for the
    /// series, `3·stderr + |bias|` of the paired estimate for Monte Carlo.
    pub band: Vec<f64>,
}

impl DifferenceGrid {
    pub fn sup_diff(&self) -> f64 {
        self.diff.iter().fold(0.0, |m, v| m.max(*v))
    }
}

/// `a − b`, provided both were computed with the same method and discretization.
pub fn difference(a: &DensityField, b: &DensityField) -> Result<DifferenceGrid> {
    if a.discretization.method() != b.discretization.method() {
        return Err(Error::MethodMismatch(format!(
            "cannot difference {} against {}",
            a.discretization.method().name(),
            b.discretization.method().name()
        )));
    }
    if a.discretization != b.discretization {
        return Err(Error::MethodMismatch("fields use different discretizations".into()));
    }
    if a.t != b.t || a.from != b.from || a.points != b.points {
        return Err(Error::MethodMismatch("fields are evaluated at different points".into()));
    }
    let signed: Vec<f64> = a.values.iter().zip(&b.values).map(|(u, v)| u - v).collect();
    let band = match &a.discretization {
        Discretization::Series { .. } => signed
            .iter()
            .zip(a.coarse.iter().zip(&b.coarse))
            .zip(a.values.iter().zip(&b.values))
            .map(|((s, (ca, cb)), (va, vb))| (s - (ca - cb)).abs().max(1e-13 * (va.abs() + vb.abs())))
            .collect(),
        Discretization::MonteCarlo { config, bandwidth } => {
            let (sa, sb) = match (&a.samples, &b.samples) {
                (Some(x), Some(y)) => (x, y),
                _ => return Err(Error::MethodMismatch("Monte Carlo field carries no samples".into())),
            };
            let est = kde_difference(sa, sb, &a.points, bandwidth, config.truncation)?;
            est.stderr
                .iter()
                .zip(&est.bias)
                .map(|(s, b)| 3.0 * s + b.abs())
                .collect()
        }
    };
    Ok(DifferenceGrid {
        method: a.discretization.method(),
        base: a.values.clone(),
        perturbed: b.values.clone(),
        diff: signed.iter().map(|v| v.abs()).collect(),
        signed,
        band,
    })
}

/// `|p − p_ε|` on `grid`, one grid per executed method. Series runs share
/// quadrature nodes and bridge references (from the base field); Monte Carlo
/// runs share random numbers and base-field bandwidths.
pub fn density_difference(
    pair: &PerturbationPair,
    t: f64,
    from: &PhasePoint,
    grid: &GridSpec,
    config: &MethodConfig,
) -> Result<Vec<DifferenceGrid>> {
    config.validate()?;
    let d = pair.dim();
    pair.base.check_dim(from)?;
    let points = grid.points(d)?;
    let mut out = Vec::new();
    for &m in config.method.components() {
        let (a, b) = match m {
            Method::Series => {
                let refs = shared_references(&pair.base, &config.scheme, &points)?;
                let a = series_density_field(&pair.base, t, from, &points, config.order, &config.scheme, refs.clone())?;
                let b = series_density_field(&pair.perturbed, t, from, &points, config.order, &config.scheme, refs)?;
                (a, b)
            }
            _ => {
                let a = mc_density_field(&pair.base, t, from, &points, &config.monte_carlo, None)?;
                let bw = match &a.discretization {
                    Discretization::MonteCarlo { bandwidth, .. } => bandwidth.clone(),
                    Discretization::Series { .. } => unreachable!(),
                };
                let b = mc_density_field(&pair.perturbed, t, from, &points, &config.monte_carlo, Some(&bw))?;
                (a, b)
            }
        };
        out.push(difference(&a, &b)?);
    }
    Ok(out)
}
