//! Sampled norm estimates: Hölder seminorm, `L^q` norm and the perturbation
//! norms `Δ_σ`, `Δ_b`, `Δ_total`. All estimates are lower bounds computed on
//! a declared box with a declared resolution.

use std::fmt;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::{CoefficientField, PhasePoint};
use crate::error::{Error, Result};
use crate::numeric::{op_norm, pairwise_sum};

/// Integrability index `q ∈ (1, ∞]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum QIndex {
    Finite(f64),
    Infinite,
}

impl QIndex {
    pub fn validate(&self) -> Result<()> {
        match self {
            QIndex::Finite(q) if !(*q > 1.0 && q.is_finite()) => {
                Err(Error::invalid("q", format!("must lie in (1, ∞], got {q}")))
            }
            _ => Ok(()),
        }
    }

    /// `q > 4d` (or `q = ∞`), the integrability needed for the stability bound.
    pub fn validate_for_dim(&self, d: usize) -> Result<()> {
        self.validate()?;
        if let QIndex::Finite(q) = self {
            let bound = 4.0 * d as f64;
            if *q <= bound {
                return Err(Error::invalid("q", format!("must satisfy q > 4d = {bound} (got {q})")));
            }
        }
        Ok(())
    }

    pub fn is_infinite(&self) -> bool {
        matches!(self, QIndex::Infinite)
    }
}

impl fmt::Display for QIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            QIndex::Finite(q) => write!(f, "{q}"),
            QIndex::Infinite => write!(f, "inf"),
        }
    }
}

impl Serialize for QIndex {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            QIndex::Finite(q) => s.serialize_f64(*q),
            QIndex::Infinite => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for QIndex {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Int(i64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(q) => Ok(QIndex::Finite(q)),
            Raw::Int(q) => Ok(QIndex::Finite(q as f64)),
            Raw::Text(s) if s == "inf" || s == "infinity" => Ok(QIndex::Infinite),
            Raw::Text(s) => Err(serde::de::Error::custom(format!(
                "expected a number or \"inf\", got {s:?}"
            ))),
        }
    }
}

/// Sampling specification shared by the norm estimators.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormSampling {
    /// Point pairs for the Hölder seminorm (and extra points for sup norms).
    pub n_pairs: usize,
    /// Half-width of the box `[−R, R]^{2d}`.
    pub box_radius: f64,
    /// Midpoint-grid cells per axis for `L^q` and sup norms.
    pub resolution: usize,
    pub seed: u64,
}

impl Default for NormSampling {
    fn default() -> Self {
        NormSampling {
            n_pairs: 20_000,
            box_radius: 4.0,
            resolution: 81,
            seed: 1,
        }
    }
}

impl NormSampling {
    pub fn validate(&self) -> Result<()> {
        if self.n_pairs == 0 {
            return Err(Error::invalid("n_pairs", "must be at least 1"));
        }
        if !(self.box_radius > 0.0 && self.box_radius.is_finite()) {
            return Err(Error::invalid("box_radius", "must be positive and finite"));
        }
        if self.resolution == 0 {
            return Err(Error::invalid("resolution", "must be at least 1"));
        }
        Ok(())
    }
}

/// Perturbation norms: `Δ_σ = |σ − σ_ε|_γ` (sup plus Hölder seminorm),
/// `Δ_b = ‖b − b_ε‖_{L^q}`, and their sum.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbationNorms {
    pub delta_sigma_sup: f64,
    pub delta_sigma_seminorm: f64,
    pub delta_sigma_gamma: f64,
    pub delta_b_q: f64,
    pub delta_total: f64,
    pub q: QIndex,
}

impl PerturbationNorms {
    pub fn new(delta_sigma_sup: f64, delta_sigma_seminorm: f64, delta_b_q: f64, q: QIndex) -> Self {
        let delta_sigma_gamma = delta_sigma_sup + delta_sigma_seminorm;
        PerturbationNorms {
            delta_sigma_sup,
            delta_sigma_seminorm,
            delta_sigma_gamma,
            delta_b_q,
            delta_total: delta_sigma_gamma + delta_b_q,
            q,
        }
    }

    pub fn zero(q: QIndex) -> Self {
        PerturbationNorms::new(0.0, 0.0, 0.0, q)
    }
}

/// A base field and its perturbation, sharing regularity constants.
#[derive(Clone, Debug)]
pub struct PerturbationPair {
    pub base: CoefficientField,
    pub perturbed: CoefficientField,
    pub epsilon: f64,
    pub q: QIndex,
}

impl PerturbationPair {
    pub fn new(base: CoefficientField, perturbed: CoefficientField, epsilon: f64, q: QIndex) -> Result<Self> {
        if base.dim() != perturbed.dim() {
            return Err(Error::invalid("pair", "fields have different dimensions"));
        }
        if !(epsilon >= 0.0 && epsilon.is_finite()) {
            return Err(Error::invalid(
                "epsilon",
                format!("must be finite and nonnegative, got {epsilon}"),
            ));
        }
        q.validate_for_dim(base.dim())?;
        let shared = base.constants().merged(perturbed.constants());
        Ok(PerturbationPair {
            base: base.with_constants(shared)?,
            perturbed: perturbed.with_constants(shared)?,
            epsilon,
            q,
        })
    }

    pub fn dim(&self) -> usize {
        self.base.dim()
    }

    pub fn swapped(&self) -> PerturbationPair {
        PerturbationPair {
            base: self.perturbed.clone(),
            perturbed: self.base.clone(),
            epsilon: self.epsilon,
            q: self.q,
        }
    }
}

type PointFn<'a> = dyn Fn(&PhasePoint) -> Result<DMatrix<f64>> + 'a;

fn uniform_point(rng: &mut ChaCha8Rng, d: usize, r: f64) -> Vec<f64> {
    (0..2 * d).map(|_| rng.random_range(-r..=r)).collect()
}

/// Sequence of point pairs; pair `k` depends only on `(seed, k)` through a
/// single sequential stream, so shorter runs sample a prefix of longer ones.
fn holder_pairs(d: usize, n_pairs: usize, r: f64, seed: u64) -> impl Iterator<Item = (Vec<f64>, Vec<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_pairs).map(move |k| {
        let u = uniform_point(&mut rng, d, r);
        let v = if k % 2 == 0 {
            uniform_point(&mut rng, d, r)
        } else {
            // local pair at a log-uniform separation in [1e-3 R, R]
            let sep = r * 10f64.powf(-3.0 * rng.random::<f64>());
            let mut dir: Vec<f64> = (0..2 * d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let n = dir.iter().map(|a| a * a).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
            for a in dir.iter_mut() {
                *a *= sep / n;
            }
            u.iter().zip(&dir).map(|(a, b)| a + b).collect()
        };
        (u, v)
    })
}

/// Max over sampled pairs of `|f(u) − f(v)| / (|u_x − v_x| + |u_y − v_y|)^γ`.
/// Coincident pairs are skipped. Matrix values use the operator norm.
pub fn holder_seminorm_estimate(
    f: &PointFn<'_>,
    dim: usize,
    gamma: f64,
    n_pairs: usize,
    box_radius: f64,
    seed: u64,
) -> Result<f64> {
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::invalid("gamma", format!("must lie in (0, 1], got {gamma}")));
    }
    if n_pairs == 0 {
        return Err(Error::invalid("n_pairs", "must be at least 1"));
    }
    if !(box_radius > 0.0 && box_radius.is_finite()) {
        return Err(Error::invalid("box_radius", "must be positive and finite"));
    }
    let mut best: f64 = 0.0;
    for (u, v) in holder_pairs(dim, n_pairs, box_radius, seed) {
        let pu = PhasePoint::from_stacked(&u)?;
        let pv = PhasePoint::from_stacked(&v)?;
        let dist = pu.additive_distance(&pv);
        if dist == 0.0 {
            continue;
        }
        let diff = f(&pu)? - f(&pv)?;
        let q = op_norm(&diff) / dist.powf(gamma);
        if q.is_nan() {
            return Err(Error::NonFinite {
                what: "Hölder quotient",
                point: pu.to_string(),
            });
        }
        best = best.max(q);
    }
    Ok(best)
}

/// Visits the midpoints of a tensor grid with `n` cells per axis on `[−R, R]^{2d}`.
fn for_each_midpoint(d: usize, n: usize, r: f64, mut visit: impl FnMut(&[f64]) -> Result<()>) -> Result<()> {
    let h = 2.0 * r / n as f64;
    let dims = 2 * d;
    let mut idx = vec![0usize; dims];
    let mut p = vec![0.0; dims];
    loop {
        for k in 0..dims {
            p[k] = -r + (idx[k] as f64 + 0.5) * h;
        }
        visit(&p)?;
        let mut k = 0;
        loop {
            if k == dims {
                return Ok(());
            }
            idx[k] += 1;
            if idx[k] < n {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
    }
}

/// `L^q` norm over the full state space `R^{2d}`, restricted to the box and
/// computed with the midpoint rule; `q = ∞` gives the grid sup.
pub fn lq_norm_estimate(f: &PointFn<'_>, dim: usize, q: QIndex, box_radius: f64, resolution: usize) -> Result<f64> {
    q.validate()?;
    if !(box_radius > 0.0 && box_radius.is_finite()) {
        return Err(Error::invalid("box_radius", "must be positive and finite"));
    }
    if resolution == 0 {
        return Err(Error::invalid("resolution", "must be at least 1"));
    }
    let cell = (2.0 * box_radius / resolution as f64).powi(2 * dim as i32);
    let mut values = Vec::new();
    let mut sup: f64 = 0.0;
    for_each_midpoint(dim, resolution, box_radius, |p| {
        let pt = PhasePoint::from_stacked(p)?;
        let v = op_norm(&f(&pt)?);
        if !v.is_finite() {
            return Err(Error::NonFinite {
                what: "integrand",
                point: pt.to_string(),
            });
        }
        match q {
            QIndex::Infinite => sup = sup.max(v),
            QIndex::Finite(q) => values.push(v.powf(q) * cell),
        }
        Ok(())
    })?;
    Ok(match q {
        QIndex::Infinite => sup,
        QIndex::Finite(q) => pairwise_sum(&values).powf(1.0 / q),
    })
}

/// Sup of `|f|` over the midpoint grid, the box center and `n_pairs` uniform samples.
pub fn sup_norm_estimate(f: &PointFn<'_>, dim: usize, sampling: &NormSampling) -> Result<f64> {
    sampling.validate()?;
    let mut sup = lq_norm_estimate(f, dim, QIndex::Infinite, sampling.box_radius, sampling.resolution)?;
    sup = sup.max(op_norm(&f(&PhasePoint::origin(dim))?));
    let mut rng = ChaCha8Rng::seed_from_u64(sampling.seed ^ 0x5u64.rotate_left(60));
    for _ in 0..sampling.n_pairs {
        let p = PhasePoint::from_stacked(&uniform_point(&mut rng, dim, sampling.box_radius))?;
        sup = sup.max(op_norm(&f(&p)?));
    }
    Ok(sup)
}

/// `Δ_σ = sup|σ − σ_ε| + [σ − σ_ε]_γ`, `Δ_b = ‖b − b_ε‖_{L^q}`, `Δ_total = Δ_σ + Δ_b`.
pub fn perturbation_norms(pair: &PerturbationPair, sampling: &NormSampling) -> Result<PerturbationNorms> {
    sampling.validate()?;
    let d = pair.dim();
    let gamma = pair.base.constants().gamma;
    let dsigma = |p: &PhasePoint| -> Result<DMatrix<f64>> { Ok(pair.base.sigma(p)? - pair.perturbed.sigma(p)?) };
    let ddrift = |p: &PhasePoint| -> Result<DMatrix<f64>> {
        let diff = pair.base.drift(p)? - pair.perturbed.drift(p)?;
        Ok(DMatrix::from_column_slice(d, 1, diff.as_slice()))
    };
    let sup = sup_norm_estimate(&dsigma, d, sampling)?;
    let semi = holder_seminorm_estimate(&dsigma, d, gamma, sampling.n_pairs, sampling.box_radius, sampling.seed)?;
    let db = lq_norm_estimate(&ddrift, d, pair.q, sampling.box_radius, sampling.resolution)?;
    Ok(PerturbationNorms::new(sup, semi, db, pair.q))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{PerturbationFamily, RegularityConstants};

    fn scalar(f: impl Fn(f64, f64) -> f64) -> impl Fn(&PhasePoint) -> Result<DMatrix<f64>> {
        move |p: &PhasePoint| Ok(DMatrix::from_element(1, 1, f(p.x()[0], p.y()[0])))
    }

    #[test]
    fn constant_has_zero_seminorm() {
        let f = scalar(|_, _| 3.0);
        assert_eq!(holder_seminorm_estimate(&f, 1, 0.5, 500, 2.0, 3).unwrap(), 0.0);
    }

    #[test]
    fn identity_in_x_has_seminorm_approaching_one() {
        let f = scalar(|x, _| x);
        let coarse = holder_seminorm_estimate(&f, 1, 1.0, 200, 2.0, 9).unwrap();
        let fine = holder_seminorm_estimate(&f, 1, 1.0, 20_000, 2.0, 9).unwrap();
        assert!(coarse > 0.0 && coarse <= 1.0);
        assert!(fine >= coarse);
        assert!(fine > 0.99 && fine <= 1.0, "{fine}");
    }

    #[test]
    fn seminorm_of_constant_shift_difference() {
        let eps = 0.25;
        let f = scalar(|x, y| (x * y).sin());
        let g = scalar(move |x, y| (x * y).sin() + eps);
        let diff = |p: &PhasePoint| Ok(f(p)? - g(p)?);
        assert!(holder_seminorm_estimate(&diff, 1, 0.7, 1000, 3.0, 1).unwrap() < 1e-12);
        let s = NormSampling {
            n_pairs: 100,
            box_radius: 3.0,
            resolution: 11,
            seed: 1,
        };
        assert!((sup_norm_estimate(&diff, 1, &s).unwrap() - eps).abs() < 1e-12);
    }

    #[test]
    fn coincident_pairs_never_divide_by_zero() {
        // a tiny box still yields finite output
        let f = scalar(|x, _| x);
        let v = holder_seminorm_estimate(&f, 1, 1.0, 50, 1e-300, 2).unwrap();
        assert!(v.is_finite());
    }

    #[test]
    fn lq_of_zero_and_indicator() {
        let zero = scalar(|_, _| 0.0);
        for q in [QIndex::Finite(1.5), QIndex::Finite(9.0), QIndex::Infinite] {
            assert_eq!(lq_norm_estimate(&zero, 1, q, 2.0, 20).unwrap(), 0.0);
        }
        let ind = scalar(|x, y| {
            if (0.0..=1.0).contains(&x) && (0.0..=1.0).contains(&y) {
                1.0
            } else {
                0.0
            }
        });
        let v = lq_norm_estimate(&ind, 1, QIndex::Finite(2.0), 2.0, 40).unwrap();
        assert!((v - 1.0).abs() < 1e-12, "{v}");
    }

    #[test]
    fn lq_of_gaussian_matches_quadrature_oracle() {
        // Oracle: (∫ e^{-2x²} dx)² by composite Simpson on [-8, 8].
        let n = 4000;
        let h = 16.0 / n as f64;
        let mut s = 0.0;
        for k in 0..=n {
            let x = -8.0 + k as f64 * h;
            let w = if k == 0 || k == n {
                1.0
            } else if k % 2 == 1 {
                4.0
            } else {
                2.0
            };
            s += w * (-2.0 * x * x).exp();
        }
        let one_dim = s * h / 3.0;
        let oracle = one_dim; // sqrt(one_dim²)
        let f = scalar(|x, y| (-x * x - y * y).exp());
        let v = lq_norm_estimate(&f, 1, QIndex::Finite(2.0), 6.0, 600).unwrap();
        assert!((v - oracle).abs() < 1e-6, "{v} vs {oracle}");
        assert!((v - (std::f64::consts::PI / 2.0).sqrt()).abs() < 1e-4);
    }

    #[test]
    fn lq_rejects_q_at_most_one() {
        let f = scalar(|_, _| 1.0);
        assert!(lq_norm_estimate(&f, 1, QIndex::Finite(1.0), 1.0, 4).is_err());
    }

    #[test]
    fn q_must_exceed_four_d() {
        assert!(QIndex::Finite(2.0).validate_for_dim(1).is_err());
        assert!(QIndex::Finite(4.0).validate_for_dim(1).is_err());
        assert!(QIndex::Finite(4.5).validate_for_dim(1).is_ok());
        assert!(QIndex::Infinite.validate_for_dim(3).is_ok());
    }

    #[test]
    fn qindex_serde() {
        #[derive(Serialize, Deserialize, PartialEq, Debug)]
        struct W {
            q: QIndex,
        }
        let w: W = toml::from_str("q = \"inf\"").unwrap();
        assert_eq!(w.q, QIndex::Infinite);
        let w: W = toml::from_str("q = 9").unwrap();
        assert_eq!(w.q, QIndex::Finite(9.0));
        let w: W = toml::from_str("q = 9.5").unwrap();
        assert_eq!(w.q, QIndex::Finite(9.5));
    }

    fn sampling() -> NormSampling {
        NormSampling {
            n_pairs: 2000,
            box_radius: 4.0,
            resolution: 41,
            seed: 5,
        }
    }

    #[test]
    fn identical_fields_have_zero_norms() {
        let base = CoefficientField::constant(vec![0.3], 1.0).unwrap();
        let pair = PerturbationPair::new(base.clone(), base, 0.0, QIndex::Infinite).unwrap();
        let n = perturbation_norms(&pair, &sampling()).unwrap();
        assert_eq!(n, PerturbationNorms::zero(QIndex::Infinite));
    }

    #[test]
    fn sigma_shift_norms() {
        let eps = 0.05;
        let base = CoefficientField::constant(vec![0.3], 1.0).unwrap();
        let pert = PerturbationFamily::SigmaShift { amplitude: 1.0 }
            .apply(&base, eps)
            .unwrap();
        let pair = PerturbationPair::new(base, pert, eps, QIndex::Infinite).unwrap();
        let n = perturbation_norms(&pair, &sampling()).unwrap();
        assert!((n.delta_sigma_gamma - eps).abs() < 1e-12, "{n:?}");
        assert_eq!(n.delta_b_q, 0.0);
        assert_eq!(n.delta_total, n.delta_sigma_gamma + n.delta_b_q);
    }

    #[test]
    fn drift_bump_sup_norm_is_epsilon() {
        // grid-scan oracle: the bump peaks at the origin, which an odd grid contains
        let eps = 0.1;
        let base = CoefficientField::constant(vec![0.0], 1.0).unwrap();
        let pert = PerturbationFamily::DriftBump {
            amplitude: 1.0,
            center: PhasePoint::scalar(0.0, 0.0),
            width: 1.0,
            direction: vec![1.0],
        }
        .apply(&base, eps)
        .unwrap();
        let pair = PerturbationPair::new(base, pert, eps, QIndex::Infinite).unwrap();
        let n = perturbation_norms(&pair, &sampling()).unwrap();
        assert!((n.delta_b_q - eps).abs() < 1e-15, "{n:?}");
        assert_eq!(n.delta_sigma_gamma, 0.0);
    }

    #[test]
    fn pair_rejects_small_q() {
        let base = CoefficientField::constant(vec![0.0], 1.0).unwrap();
        assert!(PerturbationPair::new(base.clone(), base, 0.1, QIndex::Finite(2.0)).is_err());
    }

    #[test]
    fn pair_shares_constants() {
        let base = CoefficientField::constant(vec![0.0], 1.0).unwrap();
        let other = CoefficientField::constant(vec![2.0], 1.0)
            .unwrap()
            .with_constants(RegularityConstants {
                gamma: 0.5,
                kappa: 1.0,
                k1: 2.0,
                k2: 1.0,
                lambda: 1.0,
            })
            .unwrap();
        let pair = PerturbationPair::new(base, other, 1.0, QIndex::Infinite).unwrap();
        assert_eq!(pair.base.constants(), pair.perturbed.constants());
        assert_eq!(pair.base.constants().gamma, 0.5);
    }
}
