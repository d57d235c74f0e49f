//! Sampled refutation checks for boundedness, ellipticity and Hölder continuity.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{diffusion_matrix, holder_seminorm_estimate, CoefficientField, PhasePoint};
use crate::error::{Error, Result};
use crate::numeric::op_norm;

const NOTE: &str = "sampling can refute an assumption but never prove it";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssumptionCheck {
    pub name: String,
    /// Declared bound the sampled quantity is compared against.
    pub bound: f64,
    /// Worst sampled value (max, or min for the ellipticity floor).
    pub worst: f64,
    pub witness: Option<PhasePoint>,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub checks: Vec<AssumptionCheck>,
    pub n_samples: usize,
    pub box_radius: f64,
    pub seed: u64,
    pub note: String,
}

impl AssumptionReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&AssumptionCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}

struct Tracker {
    name: &'static str,
    bound: f64,
    worst: f64,
    witness: Option<PhasePoint>,
    floor: bool,
}

impl Tracker {
    fn new(name: &'static str, bound: f64, floor: bool) -> Self {
        let worst = if floor { f64::INFINITY } else { f64::NEG_INFINITY };
        Tracker {
            name,
            bound,
            worst,
            witness: None,
            floor,
        }
    }

    fn offer(&mut self, value: f64, p: &PhasePoint) {
        let worse = if self.floor {
            value < self.worst
        } else {
            value > self.worst
        };
        if worse {
            self.worst = value;
            self.witness = Some(p.clone());
        }
    }

    fn finish(self) -> AssumptionCheck {
        let passed = if self.floor {
            self.worst >= self.bound
        } else {
            self.worst <= self.bound
        };
        AssumptionCheck {
            name: self.name.to_string(),
            bound: self.bound,
            worst: self.worst,
            witness: self.witness,
            passed,
        }
    }
}

/// Samples `n_samples` points uniformly in `[−R, R]^{2d}` (plus the origin)
/// and compares drift/diffusion sup norms, the spectrum of `a` and the
/// Hölder quotient of `σ` with the declared constants.
pub fn verify_assumptions(
    field: &CoefficientField,
    n_samples: usize,
    box_radius: f64,
    seed: u64,
) -> Result<AssumptionReport> {
    if n_samples == 0 {
        return Err(Error::invalid("n_samples", "must be at least 1"));
    }
    if !(box_radius > 0.0 && box_radius.is_finite()) {
        return Err(Error::invalid("box_radius", "must be positive and finite"));
    }
    let d = field.dim();
    let k = *field.constants();
    let mut drift = Tracker::new("A1-drift", k.k1, false);
    let mut diffusion = Tracker::new("A1-diffusion", k.k2, false);
    let mut upper = Tracker::new("A2-upper", k.lambda, false);
    let mut lower = Tracker::new("A2-lower", 1.0 / k.lambda, true);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..=n_samples {
        let p = if i == 0 {
            PhasePoint::origin(d)
        } else {
            let v: Vec<f64> = (0..2 * d).map(|_| rng.random_range(-box_radius..=box_radius)).collect();
            PhasePoint::from_stacked(&v)?
        };
        drift.offer(field.drift(&p)?.norm(), &p);
        diffusion.offer(op_norm(&field.sigma(&p)?), &p);
        let eig = diffusion_matrix(field, &p)?.symmetric_eigenvalues();
        upper.offer(eig.max(), &p);
        lower.offer(eig.min(), &p);
    }

    let sigma = |p: &PhasePoint| field.sigma(p);
    let semi = holder_seminorm_estimate(&sigma, d, k.gamma, n_samples, box_radius, seed.wrapping_add(1))?;
    let holder = AssumptionCheck {
        name: "A3".to_string(),
        bound: k.kappa,
        worst: semi,
        witness: None,
        passed: semi <= k.kappa * (1.0 + 1e-12) + 1e-15,
    };

    Ok(AssumptionReport {
        checks: vec![
            drift.finish(),
            diffusion.finish(),
            upper.finish(),
            lower.finish(),
            holder,
        ],
        n_samples,
        box_radius,
        seed,
        note: NOTE.to_string(),
    })
}
