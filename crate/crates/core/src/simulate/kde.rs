use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::simulate_terminals;
use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::model::{CoefficientField, PhasePoint};
use crate::numeric::pairwise_sum;

const CHUNK: usize = 2048;

/// Monte Carlo density settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McConfig {
    pub n_paths: usize,
    pub n_steps: usize,
    pub seed: u64,
    /// Bandwidth exponent; `1/(2d + 4)` when absent.
    pub bandwidth_exponent: Option<f64>,
    /// Kernel support in bandwidths.
    pub truncation: f64,
}

impl Default for McConfig {
    fn default() -> Self {
        McConfig {
            n_paths: 100_000,
            n_steps: 200,
            seed: 0,
            bandwidth_exponent: None,
            truncation: 6.0,
        }
    }
}

impl McConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_paths < 100 {
            return Err(Error::invalid(
                "n_paths",
                format!("must be at least 100, got {}", self.n_paths),
            ));
        }
        if self.n_steps == 0 {
            return Err(Error::invalid("n_steps", "must be at least 1"));
        }
        if let Some(e) = self.bandwidth_exponent {
            if !(e > 0.0 && e < 1.0) {
                return Err(Error::invalid(
                    "bandwidth_exponent",
                    format!("must lie in (0, 1), got {e}"),
                ));
            }
        }
        if !(self.truncation > 0.0) {
            return Err(Error::invalid("truncation", "must be positive"));
        }
        Ok(())
    }

    fn exponent(&self, d: usize) -> f64 {
        self.bandwidth_exponent.unwrap_or(1.0 / (2.0 * d as f64 + 4.0))
    }
}

/// Per-coordinate bandwidths in sheared coordinates `(x, y − x t/2)`, in
/// which the two components of the Kolmogorov law are uncorrelated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bandwidth {
    pub t: f64,
    pub values: Vec<f64>,
}

fn shear(p: &[f64], t: f64, out: &mut [f64]) {
    let d = p.len() / 2;
    for i in 0..d {
        out[i] = p[i];
        out[d + i] = p[d + i] - 0.5 * t * p[i];
    }
}

impl Bandwidth {
    /// `sd · n^{−exponent}` per sheared coordinate.
    pub fn from_samples(samples: &[Vec<f64>], t: f64, exponent: f64) -> Result<Self> {
        let n = samples.len();
        if n < 2 {
            return Err(Error::DegenerateSample("fewer than two samples".into()));
        }
        let dims = samples[0].len();
        let mut sheared = vec![0.0; dims];
        let mut sum = vec![0.0; dims];
        let mut sumsq = vec![0.0; dims];
        for s in samples {
            shear(s, t, &mut sheared);
            for k in 0..dims {
                sum[k] += sheared[k];
                sumsq[k] += sheared[k] * sheared[k];
            }
        }
        let nf = n as f64;
        let factor = nf.powf(-exponent);
        let mut values = Vec::with_capacity(dims);
        for k in 0..dims {
            let mean = sum[k] / nf;
            let var = ((sumsq[k] - nf * mean * mean) / (nf - 1.0)).max(0.0);
            let sd = var.sqrt();
            if !(sd > 1e-12 * mean.abs().max(1.0)) {
                return Err(Error::DegenerateSample(format!("coordinate {k} has zero spread")));
            }
            values.push(sd * factor);
        }
        Ok(Bandwidth { t, values })
    }
}

/// Density estimate and closed-form bootstrap standard error at query points.
/// `bias` estimates the smoothing bias as `f̂_{√2 h} − f̂_h`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KdeEstimate {
    pub values: Vec<f64>,
    pub stderr: Vec<f64>,
    pub bias: Vec<f64>,
    pub bandwidth: Bandwidth,
}

fn shear_all(samples: &[Vec<f64>], t: f64) -> Vec<f64> {
    let dims = samples.first().map_or(0, |s| s.len());
    let mut flat = vec![0.0; samples.len() * dims];
    for (s, out) in samples.iter().zip(flat.chunks_mut(dims)) {
        shear(s, t, out);
    }
    flat
}

/// Kernel values at `q` for all samples: returns per-chunk `(Σk, Σk²)`.
fn kernel_sums(flat: &[f64], other: Option<&[f64]>, q: &[f64], h: &[f64], cut: f64, norm: f64) -> (f64, f64) {
    let dims = q.len();
    let kernel = |s: &[f64]| -> f64 {
        let mut e = 0.0;
        for k in 0..dims {
            let z = (s[k] - q[k]) / h[k];
            if z.abs() > cut {
                return 0.0;
            }
            e += z * z;
        }
        norm * (-0.5 * e).exp()
    };
    let n = flat.len() / dims;
    let mut sums = Vec::with_capacity(n.div_ceil(CHUNK));
    let mut sqs = Vec::with_capacity(n.div_ceil(CHUNK));
    for start in (0..n).step_by(CHUNK) {
        let end = (start + CHUNK).min(n);
        let (mut s1, mut s2) = (0.0, 0.0);
        for i in start..end {
            let mut k = kernel(&flat[i * dims..(i + 1) * dims]);
            if let Some(o) = other {
                k -= kernel(&o[i * dims..(i + 1) * dims]);
            }
            s1 += k;
            s2 += k * k;
        }
        sums.push(s1);
        sqs.push(s2);
    }
    (pairwise_sum(&sums), pairwise_sum(&sqs))
}

fn estimate(
    a: &[Vec<f64>],
    b: Option<&[Vec<f64>]>,
    points: &[PhasePoint],
    bandwidth: &Bandwidth,
    truncation: f64,
) -> Result<KdeEstimate> {
    let n = a.len();
    if n == 0 {
        return Err(Error::DegenerateSample("no samples".into()));
    }
    let dims = a[0].len();
    if bandwidth.values.len() != dims || points.iter().any(|p| 2 * p.dim() != dims) {
        return Err(Error::invalid("points", "dimension does not match the samples"));
    }
    let t = bandwidth.t;
    let flat_a = shear_all(a, t);
    let flat_b = b.map(|b| shear_all(b, t));
    let h = &bandwidth.values;
    let wide: Vec<f64> = h.iter().map(|v| v * std::f64::consts::SQRT_2).collect();
    let norm_of = |h: &[f64]| {
        h.iter()
            .map(|v| 1.0 / (v * (2.0 * std::f64::consts::PI).sqrt()))
            .product::<f64>()
    };
    let (norm, norm_wide) = (norm_of(h), norm_of(&wide));
    let nf = n as f64;
    let results: Vec<(f64, f64, f64)> = points
        .par_iter()
        .map(|p| {
            let mut q = vec![0.0; dims];
            shear(&p.stacked(), t, &mut q);
            let (s1, s2) = kernel_sums(&flat_a, flat_b.as_deref(), &q, h, truncation, norm);
            let (w1, _) = kernel_sums(&flat_a, flat_b.as_deref(), &q, &wide, truncation, norm_wide);
            let mean = s1 / nf;
            let var = (s2 / nf - mean * mean).max(0.0);
            (mean, (var / nf).sqrt(), w1 / nf - mean)
        })
        .collect();
    Ok(KdeEstimate {
        values: results.iter().map(|r| r.0).collect(),
        stderr: results.iter().map(|r| r.1).collect(),
        bias: results.iter().map(|r| r.2).collect(),
        bandwidth: bandwidth.clone(),
    })
}

/// Kernel density estimate of stacked samples at `points`.
pub fn kde_at(
    samples: &[Vec<f64>],
    points: &[PhasePoint],
    bandwidth: &Bandwidth,
    truncation: f64,
) -> Result<KdeEstimate> {
    estimate(samples, None, points, bandwidth, truncation)
}

/// [`kde_at`] with bandwidths from the samples.
pub fn kde_estimate(
    samples: &[Vec<f64>],
    t: f64,
    points: &[PhasePoint],
    exponent: f64,
    truncation: f64,
) -> Result<KdeEstimate> {
    let bw = Bandwidth::from_samples(samples, t, exponent)?;
    estimate(samples, None, points, &bw, truncation)
}

/// Paired estimate of `p_a − p_b` from samples driven by common random
/// numbers; the standard error uses the paired kernel differences.
pub fn kde_difference(
    a: &[Vec<f64>],
    b: &[Vec<f64>],
    points: &[PhasePoint],
    bandwidth: &Bandwidth,
    truncation: f64,
) -> Result<KdeEstimate> {
    if a.len() != b.len() {
        return Err(Error::MethodMismatch("paired samples must have equal sizes".into()));
    }
    estimate(a, Some(b), points, bandwidth, truncation)
}

/// Density estimate on a `(x, y)` grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityGrid {
    pub t: f64,
    pub x_axis: Vec<f64>,
    pub y_axis: Vec<f64>,
    /// Row-major, `x` outer.
    pub values: Vec<f64>,
    pub stderr: Vec<f64>,
    /// Smoothing-bias estimate per node (not part of the CSV table).
    pub bias: Vec<f64>,
    pub bandwidth: (f64, f64),
    pub n_paths: usize,
}

impl DensityGrid {
    pub fn value(&self, ix: usize, iy: usize) -> f64 {
        self.values[ix * self.y_axis.len() + iy]
    }

    /// Trapezoid-free Riemann mass: `Σ values · Δx Δy`.
    pub fn riemann_mass(&self) -> f64 {
        let step = |a: &[f64]| if a.len() > 1 { a[1] - a[0] } else { 0.0 };
        pairwise_sum(&self.values) * step(&self.x_axis) * step(&self.y_axis)
    }

    /// Long-format CSV with header `t,x,y,value,stderr`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,x,y,value,stderr\n");
        for (ix, x) in self.x_axis.iter().enumerate() {
            for (iy, y) in self.y_axis.iter().enumerate() {
                let k = ix * self.y_axis.len() + iy;
                let _ = writeln!(out, "{},{},{},{},{}", self.t, x, y, self.values[k], self.stderr[k]);
            }
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

pub fn mc_density_with(
    field: &CoefficientField,
    initial: &PhasePoint,
    t: f64,
    grid: &GridSpec,
    config: &McConfig,
) -> Result<DensityGrid> {
    config.validate()?;
    let d = field.dim();
    let points = grid.points(d)?;
    let samples = simulate_terminals(field, initial, t, config.n_steps, config.n_paths, config.seed)?;
    let est = kde_estimate(&samples, t, &points, config.exponent(d), config.truncation)?;
    Ok(DensityGrid {
        t,
        x_axis: grid.x.values(),
        y_axis: grid.y.values(),
        values: est.values,
        stderr: est.stderr,
        bias: est.bias,
        bandwidth: (est.bandwidth.values[0], est.bandwidth.values[d]),
        n_paths: config.n_paths,
    })
}

/// Euler paths plus kernel density estimate on `grid`.
pub fn mc_density(
    field: &CoefficientField,
    initial: &PhasePoint,
    t: f64,
    n_paths: usize,
    n_steps: usize,
    grid: &GridSpec,
    seed: u64,
) -> Result<DensityGrid> {
    let config = McConfig {
        n_paths,
        n_steps,
        seed,
        ..McConfig::default()
    };
    mc_density_with(field, initial, t, grid, &config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::AxisSpec;
    use crate::model::RegularityConstants;
    use crate::proxy::frozen_density;

    fn p(x: f64, y: f64) -> PhasePoint {
        PhasePoint::scalar(x, y)
    }

    #[test]
    fn degenerate_sample_rejected() {
        let c = RegularityConstants {
            gamma: 1.0,
            kappa: 0.0,
            k1: 1.0,
            k2: 1.0,
            lambda: 1.0,
        };
        let f = CoefficientField::from_fns(1, |_, _, o| o[0] = 0.0, |_, _, o| o[0] = 0.0, c).unwrap();
        let g = GridSpec::around_mean(&p(0.0, 0.0), 1.0, 3.0, 5);
        let err = mc_density(&f, &p(0.0, 0.0), 1.0, 200, 10, &g, 1).unwrap_err();
        assert!(matches!(err, Error::DegenerateSample(_)));
        assert!(mc_density(&f, &p(0.0, 0.0), 1.0, 50, 10, &g, 1).is_err());
    }

    #[test]
    fn mass_and_closed_form_agreement() {
        let f = CoefficientField::constant(vec![0.0], 1.0).unwrap();
        let from = p(0.0, 0.0);
        let g = GridSpec::around_mean(&from, 1.0, 5.0, 61);
        let dg = mc_density(&f, &from, 1.0, 100_000, 100, &g, 5).unwrap();
        let mass = dg.riemann_mass();
        assert!((0.97..=1.01).contains(&mass), "{mass}");

        let bulk = GridSpec::around_mean(&from, 1.0, 2.0, 9);
        let est = mc_density(&f, &from, 1.0, 100_000, 100, &bulk, 5).unwrap();
        let (hu, hv) = est.bandwidth;
        let pts = bulk.points(1).unwrap();
        let peak = 1.0 / (2.0 * std::f64::consts::PI * (1.0f64 / 12.0).sqrt());
        let mut checked = 0;
        for (k, q) in pts.iter().enumerate() {
            let exact = frozen_density(&f, 1.0, &from, q).unwrap();
            if exact < 0.05 * peak {
                continue;
            }
            checked += 1;
            // expectation of the estimator: Gaussian in sheared coordinates
            // with kernel variance added to (1, 1/12)
            let (u, v) = (q.x()[0], q.y()[0] - 0.5 * q.x()[0]);
            let (vu, vv) = (1.0 + hu * hu, 1.0 / 12.0 + hv * hv);
            let smoothed = (-0.5 * (u * u / vu + v * v / vv)).exp() / (2.0 * std::f64::consts::PI * (vu * vv).sqrt());
            assert!((est.values[k] - smoothed).abs() <= 3.0 * est.stderr[k], "node {k}");
            // against the unsmoothed law the bias estimate widens the band
            let band = 3.0 * est.stderr[k] + est.bias[k].abs();
            assert!(
                (est.values[k] - exact).abs() <= band,
                "node {k}: {} vs {exact}",
                est.values[k]
            );
        }
        assert!(checked > 20);
    }

    #[test]
    fn halving_paths_inflates_band() {
        let f = CoefficientField::constant(vec![0.0], 1.0).unwrap();
        let from = p(0.0, 0.0);
        let g = GridSpec::new(
            AxisSpec {
                min: -0.5,
                max: 0.5,
                points: 3,
            },
            AxisSpec {
                min: -0.3,
                max: 0.3,
                points: 3,
            },
        );
        let full = mc_density(&f, &from, 1.0, 40_000, 50, &g, 8).unwrap();
        let half = mc_density(&f, &from, 1.0, 20_000, 50, &g, 8).unwrap();
        let ratio = pairwise_sum(&half.stderr) / pairwise_sum(&full.stderr);
        assert!((1.2..=1.7).contains(&ratio), "{ratio}");
    }

    #[test]
    fn csv_layout() {
        let f = CoefficientField::constant(vec![0.0], 1.0).unwrap();
        let g = GridSpec::new(
            AxisSpec {
                min: -1.0,
                max: 1.0,
                points: 2,
            },
            AxisSpec {
                min: 0.0,
                max: 0.0,
                points: 1,
            },
        );
        let dg = mc_density(&f, &p(0.0, 0.0), 0.5, 500, 5, &g, 2).unwrap();
        let csv = dg.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "t,x,y,value,stderr");
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("0.5,-1,0,"));
        let back: DensityGrid = serde_json::from_str(&dg.to_json().unwrap()).unwrap();
        assert_eq!(back, dg);
    }

    #[test]
    fn paired_difference_of_identical_samples_is_zero() {
        let f = CoefficientField::constant(vec![0.0], 1.0).unwrap();
        let s = simulate_terminals(&f, &p(0.0, 0.0), 1.0, 20, 500, 3).unwrap();
        let bw = Bandwidth::from_samples(&s, 1.0, 1.0 / 6.0).unwrap();
        let d = kde_difference(&s, &s, &[p(0.0, 0.0)], &bw, 6.0).unwrap();
        assert_eq!(d.values, vec![0.0]);
        assert_eq!(d.stderr, vec![0.0]);
    }
}
