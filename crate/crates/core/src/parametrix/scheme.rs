//! Discretization of the time-space convolution: graded Gauss–Legendre in
//! time and Gaussian-bridge nodes in space.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{gauss_hermite_normal, gauss_legendre_unit};
use crate::proxy::DEFAULT_COVARIANCE_ORDER;

/// Spatial integration rule.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpaceRule {
    /// Tensor Gauss–Hermite on the bridge Gaussian; `space_nodes` per axis.
    GaussHermite,
    /// Importance sampling from an inflated bridge Gaussian; `space_nodes` samples.
    MonteCarlo,
}

/// Envelope constants `(c, C)` used for bound columns and tail estimates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvelopeConstants {
    pub c: f64,
    pub big_c: f64,
}

impl Default for EnvelopeConstants {
    fn default() -> Self {
        EnvelopeConstants { c: 0.5, big_c: 2.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConvolutionScheme {
    /// Total time nodes, split between the two graded halves.
    pub time_nodes: usize,
    /// Singularity exponent: the kernel behaves like `(t − u)^{β−1}`.
    pub beta: f64,
    pub space_rule: SpaceRule,
    pub space_nodes: usize,
    /// Covariance inflation for Monte Carlo space nodes.
    pub inflation: f64,
    pub seed: u64,
    /// Gauss–Legendre order of the frozen covariance.
    pub covariance_order: usize,
    /// Row-major `d × d` diffusion matrix of the reference bridge; taken from
    /// the field at the query terminal point when absent.
    pub reference: Option<Vec<f64>>,
    pub envelope: EnvelopeConstants,
}

impl Default for ConvolutionScheme {
    fn default() -> Self {
        ConvolutionScheme {
            time_nodes: 8,
            beta: 0.5,
            space_rule: SpaceRule::GaussHermite,
            space_nodes: 5,
            inflation: 1.3,
            seed: 0,
            covariance_order: DEFAULT_COVARIANCE_ORDER,
            reference: None,
            envelope: EnvelopeConstants::default(),
        }
    }
}

impl ConvolutionScheme {
    pub fn validate(&self) -> Result<()> {
        if self.time_nodes == 0 {
            return Err(Error::invalid("time_nodes", "must be at least 1"));
        }
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return Err(Error::invalid("beta", format!("must lie in (0, 1], got {}", self.beta)));
        }
        if self.space_nodes == 0 {
            return Err(Error::invalid("space_nodes", "must be at least 1"));
        }
        if !(self.inflation >= 1.0 && self.inflation.is_finite()) {
            return Err(Error::invalid("inflation", "must be finite and at least 1"));
        }
        if self.covariance_order == 0 {
            return Err(Error::invalid("covariance_order", "must be at least 1"));
        }
        if let Some(r) = &self.reference {
            if r.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid("reference", "entries must be finite"));
            }
        }
        if !(self.envelope.c > 0.0 && self.envelope.c.is_finite()) {
            return Err(Error::invalid("envelope.c", "must be positive and finite"));
        }
        if !(self.envelope.big_c >= 1.0 && self.envelope.big_c.is_finite()) {
            return Err(Error::invalid("envelope.big_c", "must be finite and at least 1"));
        }
        Ok(())
    }

    /// Same rule with time and space nodes halved, for error estimation.
    pub fn coarsened(&self) -> ConvolutionScheme {
        let mut c = self.clone();
        c.time_nodes = self.time_nodes.div_ceil(2);
        c.space_nodes = self.space_nodes.div_ceil(2);
        c
    }

    /// Same rule with time and space nodes doubled.
    pub fn refined(&self) -> ConvolutionScheme {
        let mut c = self.clone();
        c.time_nodes = 2 * self.time_nodes;
        c.space_nodes = 2 * self.space_nodes;
        c
    }
}

/// Node tables built once per series call.
#[derive(Clone, Debug)]
pub(crate) struct PreparedScheme {
    pub d: usize,
    left: Vec<(f64, f64)>,
    right: Vec<(f64, f64)>,
    end_grading: f64,
    /// Standard-normal space nodes per recursion depth, with weights.
    space: Vec<Vec<(Vec<f64>, f64)>>,
    inflation: f64,
    pub covariance_rule: Vec<(f64, f64)>,
}

const START_GRADING: f64 = 2.0;

impl PreparedScheme {
    pub fn new(scheme: &ConvolutionScheme, d: usize, depth: usize) -> Result<Self> {
        scheme.validate()?;
        let n_left = scheme.time_nodes / 2;
        let n_right = scheme.time_nodes - n_left;
        let left = if n_left > 0 {
            gauss_legendre_unit(n_left)?
        } else {
            Vec::new()
        };
        let right = gauss_legendre_unit(n_right)?;
        let dims = 2 * d;
        let (space, inflation) = match scheme.space_rule {
            SpaceRule::GaussHermite => {
                let rule = gauss_hermite_normal(scheme.space_nodes)?;
                let total = rule
                    .len()
                    .checked_pow(dims as u32)
                    .filter(|&n| n <= 1 << 22)
                    .ok_or_else(|| Error::invalid("space_nodes", "tensor grid too large"))?;
                let mut nodes = Vec::with_capacity(total);
                let mut idx = vec![0usize; dims];
                for _ in 0..total {
                    let z: Vec<f64> = idx.iter().map(|&i| rule[i].0).collect();
                    let w: f64 = idx.iter().map(|&i| rule[i].1).product();
                    nodes.push((z, w));
                    for slot in idx.iter_mut() {
                        *slot += 1;
                        if *slot < rule.len() {
                            break;
                        }
                        *slot = 0;
                    }
                }
                (vec![nodes; depth.max(1)], 1.0)
            }
            SpaceRule::MonteCarlo => {
                let w = 1.0 / scheme.space_nodes as f64;
                let levels = (0..depth.max(1))
                    .map(|level| {
                        let mut rng = ChaCha8Rng::seed_from_u64(scheme.seed);
                        rng.set_stream(level as u64 + 1);
                        (0..scheme.space_nodes)
                            .map(|_| ((0..dims).map(|_| StandardNormal.sample(&mut rng)).collect(), w))
                            .collect()
                    })
                    .collect();
                (levels, scheme.inflation)
            }
        };
        Ok(PreparedScheme {
            d,
            left,
            right,
            end_grading: 1.0 / scheme.beta,
            space,
            inflation,
            covariance_rule: gauss_legendre_unit(scheme.covariance_order)?,
        })
    }

    /// Time nodes `(u, weight)` on `(0, s)`: `u = (s/2) w²` on the left half
    /// and `s − u = (s/2) v^{1/β}` on the right half (whole interval when the
    /// left half is empty).
    pub fn time_nodes(&self, s: f64) -> Vec<(f64, f64)> {
        let mut out = Vec::with_capacity(self.left.len() + self.right.len());
        let m0 = START_GRADING;
        let m1 = self.end_grading;
        let half = if self.left.is_empty() { s } else { 0.5 * s };
        for &(w, wt) in &self.left {
            out.push((half * w.powf(m0), wt * half * m0 * w.powf(m0 - 1.0)));
        }
        for &(v, wt) in self.right.iter().rev() {
            let lag = half * v.powf(m1);
            out.push((s - lag, wt * half * m1 * v.powf(m1 - 1.0)));
        }
        out
    }

    pub fn space_nodes(&self, depth: usize) -> &[(Vec<f64>, f64)] {
        &self.space[depth.min(self.space.len() - 1)]
    }

    pub fn inflation(&self) -> f64 {
        self.inflation
    }
}

/// Reference Kolmogorov covariance `K_u ⊗ A`.
fn reference_cov(u: f64, a: &DMatrix<f64>) -> DMatrix<f64> {
    let d = a.nrows();
    let mut c = DMatrix::zeros(2 * d, 2 * d);
    let k = [[u, 0.5 * u * u], [0.5 * u * u, u * u * u / 3.0]];
    for bi in 0..2 {
        for bj in 0..2 {
            for i in 0..d {
                for j in 0..d {
                    c[(bi * d + i, bj * d + j)] = k[bi][bj] * a[(i, j)];
                }
            }
        }
    }
    c
}

fn resolvent_matrix(s: f64, d: usize) -> DMatrix<f64> {
    let mut m = DMatrix::identity(2 * d, 2 * d);
    for i in 0..d {
        m[(d + i, i)] = s;
    }
    m
}

/// Gaussian bridge of the reference process from `(0, ξ)` to `(s, ζ)`
/// observed at time `u`, as an affine map of standard normal nodes.
pub(crate) struct Bridge {
    mean: Vec<f64>,
    chol: Vec<f64>,
    log_scale: f64,
}

impl Bridge {
    pub fn new(a_ref: &DMatrix<f64>, start: &[f64], u: f64, tau: f64, end: &[f64], inflation: f64) -> Result<Self> {
        let d = a_ref.nrows();
        let n = 2 * d;
        let singular = || Error::Quadrature {
            u,
            point: "reference bridge is singular".to_string(),
        };
        let pu = reference_cov(u, a_ref).cholesky().ok_or_else(singular)?.inverse();
        let pt = reference_cov(tau, a_ref).cholesky().ok_or_else(singular)?.inverse();
        let rt = resolvent_matrix(tau, d);
        let ru = resolvent_matrix(u, d);
        let precision = &pu + rt.transpose() * &pt * &rt;
        let cov = precision.cholesky().ok_or_else(singular)?.inverse();
        let xi = DVector::from_column_slice(start);
        let zeta = DVector::from_column_slice(end);
        let mean = &cov * (&pu * (&ru * xi) + rt.transpose() * &pt * zeta);
        let l = cov.cholesky().ok_or_else(singular)?.l() * inflation;
        let log_det: f64 = (0..n).map(|i| l[(i, i)].ln()).sum();
        let log_scale = d as f64 * (2.0 * std::f64::consts::PI).ln() + log_det;
        let mut chol = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                chol[i * n + j] = l[(i, j)];
            }
        }
        Ok(Bridge {
            mean: mean.iter().copied().collect(),
            chol,
            log_scale,
        })
    }

    /// Maps a standard normal node to `η` and returns the weight `1/q(η)`.
    #[inline]
    pub fn place(&self, z: &[f64], eta: &mut [f64]) -> f64 {
        let n = self.mean.len();
        let mut zz = 0.0;
        for i in 0..n {
            let s = self.chol[i * n..=i * n + i]
                .iter()
                .zip(z)
                .fold(self.mean[i], |acc, (l, zj)| acc + l * zj);
            eta[i] = s;
            zz += z[i] * z[i];
        }
        (self.log_scale + 0.5 * zz).exp()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn time_rule_integrates_singular_weight() {
        let scheme = ConvolutionScheme {
            time_nodes: 32,
            beta: 0.5,
            ..Default::default()
        };
        let prep = PreparedScheme::new(&scheme, 1, 1).unwrap();
        let s = 0.8;
        // ∫₀ˢ (s − u)^{-1/2} du = 2√s
        let v: f64 = prep.time_nodes(s).iter().map(|(u, w)| w * (s - u).powf(-0.5)).sum();
        assert!((v - 2.0 * s.sqrt()).abs() < 1e-10, "{v}");
        // ∫₀ˢ u^{-1/2} du
        let v: f64 = prep.time_nodes(s).iter().map(|(u, w)| w * u.powf(-0.5)).sum();
        assert!((v - 2.0 * s.sqrt()).abs() < 1e-10);
        let nodes = prep.time_nodes(s);
        assert!(nodes.windows(2).all(|p| p[0].0 < p[1].0));
        assert!(nodes.iter().all(|(u, _)| *u > 0.0 && *u < s));
    }

    #[test]
    fn single_time_node_uses_whole_interval() {
        let scheme = ConvolutionScheme {
            time_nodes: 1,
            beta: 1.0,
            ..Default::default()
        };
        let prep = PreparedScheme::new(&scheme, 1, 1).unwrap();
        let nodes = prep.time_nodes(2.0);
        assert_eq!(nodes.len(), 1);
        assert!((nodes[0].1 - 2.0).abs() < 1e-15);
    }

    #[test]
    fn bridge_nodes_integrate_bridge_gaussian() {
        // Σ w/q(η) · q(η) = Σ w = 1 for GH nodes; check mass of a Gaussian equal to q itself
        let a = DMatrix::identity(1, 1);
        let b = Bridge::new(&a, &[0.1, 0.2], 0.3, 0.5, &[0.4, 0.6], 1.0).unwrap();
        let rule = gauss_hermite_normal(4).unwrap();
        let mut eta = [0.0; 2];
        let mut total = 0.0;
        for &(z1, w1) in &rule {
            for &(z2, w2) in &rule {
                let inv_q = b.place(&[z1, z2], &mut eta);
                // integrand: the bridge density itself via the product formula oracle
                let prior = gauss2(&eta, &[0.1, 0.2 + 0.1 * 0.3], 0.3);
                let lik = gauss2(&[0.4, 0.6], &[eta[0], eta[1] + eta[0] * 0.5], 0.5);
                total += w1 * w2 * inv_q * prior * lik;
            }
        }
        // ∫ p(u, ξ, η) p(τ, η, ζ) dη = p(s, ξ, ζ)
        let want = gauss2(&[0.4, 0.6], &[0.1, 0.2 + 0.1 * 0.8], 0.8);
        assert!((total - want).abs() < 1e-12 * want, "{total} {want}");
    }

    fn gauss2(v: &[f64], m: &[f64], t: f64) -> f64 {
        let (a, b, e) = (t, t * t / 2.0, t * t * t / 3.0);
        let det = a * e - b * b;
        let (p, q) = (v[0] - m[0], v[1] - m[1]);
        let quad = (e * p * p - 2.0 * b * p * q + a * q * q) / det;
        (-0.5 * quad).exp() / (2.0 * std::f64::consts::PI * det.sqrt())
    }

    #[test]
    fn monte_carlo_nodes_depend_on_level_and_seed() {
        let scheme = ConvolutionScheme {
            space_rule: SpaceRule::MonteCarlo,
            space_nodes: 10,
            seed: 4,
            ..Default::default()
        };
        let a = PreparedScheme::new(&scheme, 1, 2).unwrap();
        let b = PreparedScheme::new(&scheme, 1, 2).unwrap();
        assert_eq!(a.space_nodes(0), b.space_nodes(0));
        assert_ne!(a.space_nodes(0), a.space_nodes(1));
    }

    #[test]
    fn validation() {
        assert!(ConvolutionScheme {
            time_nodes: 0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(ConvolutionScheme {
            beta: 0.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(ConvolutionScheme {
            beta: 1.5,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(ConvolutionScheme {
            space_nodes: 0,
            ..Default::default()
        }
        .validate()
        .is_err());
    }
}
