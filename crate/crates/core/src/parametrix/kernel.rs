use smallvec::SmallVec;

use crate::error::{Error, Result};
use crate::model::{CoefficientField, PhasePoint};
use crate::numeric::gauss_legendre_unit;
use crate::proxy::{FrozenGaussian, DEFAULT_COVARIANCE_ORDER};

type Buf = SmallVec<[f64; 16]>;

/// Kernel `H(τ, ·, ξ')` for a fixed time-to-go and terminal point: the frozen
/// Gaussian and the frozen diffusion matrix are computed once.
pub(crate) struct KernelFrame {
    gauss: FrozenGaussian,
    a_frozen: Buf,
}

impl KernelFrame {
    pub fn build(field: &CoefficientField, tau: f64, terminal: &[f64], rule: &[(f64, f64)]) -> Result<Self> {
        let d = field.dim();
        let gauss = FrozenGaussian::build(field, tau, terminal, rule)?;
        let z: Buf = (0..d).map(|i| terminal[d + i] - terminal[i] * tau).collect();
        let mut scratch: Buf = SmallVec::from_elem(0.0, d * d);
        let mut a_frozen: Buf = SmallVec::from_elem(0.0, d * d);
        field.a_into(&terminal[..d], &z, &mut scratch, &mut a_frozen);
        Ok(KernelFrame { gauss, a_frozen })
    }

    /// `½ Tr[(a(w, z) − a_frozen) D²_w p̃] + ⟨b(w, z), D_w p̃⟩`.
    #[inline]
    pub fn eval(&self, field: &CoefficientField, w: &[f64], z: &[f64]) -> f64 {
        let d = w.len();
        let mut grad: Buf = SmallVec::from_elem(0.0, d);
        let mut hess: Buf = SmallVec::from_elem(0.0, d * d);
        let mut a: Buf = SmallVec::from_elem(0.0, d * d);
        let mut scratch: Buf = SmallVec::from_elem(0.0, d * d);
        let mut b: Buf = SmallVec::from_elem(0.0, d);
        self.gauss.x_jet(w, z, &mut grad, &mut hess);
        field.a_into(w, z, &mut scratch, &mut a);
        field.drift_into(w, z, &mut b);
        let mut h = 0.0;
        for k in 0..d * d {
            h += 0.5 * (a[k] - self.a_frozen[k]) * hess[k];
        }
        for i in 0..d {
            h += b[i] * grad[i];
        }
        h
    }
}

/// Parametrix kernel `H(τ, (w, z), (x', y')) = (L − L̃) p̃`. Only
/// derivatives in `w` appear.
pub fn kernel_h(field: &CoefficientField, tau: f64, at: &PhasePoint, terminal: &PhasePoint) -> Result<f64> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::invalid("tau", format!("must be positive and finite, got {tau}")));
    }
    field.check_dim(at)?;
    field.check_dim(terminal)?;
    let rule = gauss_legendre_unit(DEFAULT_COVARIANCE_ORDER)?;
    let frame = KernelFrame::build(field, tau, &terminal.stacked(), &rule)?;
    let h = frame.eval(field, at.x(), at.y());
    if !h.is_finite() {
        return Err(Error::NonFinite {
            what: "kernel value",
            point: at.to_string(),
        });
    }
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{DiffusionSpec, DriftSpec, FieldSpec};
    use crate::proxy::{kolmogorov_proxy_density, MultiIndex, ProxyParams};

    fn p(x: f64, y: f64) -> PhasePoint {
        PhasePoint::scalar(x, y)
    }

    #[test]
    fn zero_for_constant_sigma_without_drift() {
        let f = CoefficientField::constant(vec![0.0], 1.4).unwrap();
        for (tau, a, b) in [(0.3, p(0.1, 0.2), p(-0.5, 0.4)), (1.0, p(2.0, -1.0), p(0.0, 0.0))] {
            assert_eq!(kernel_h(&f, tau, &a, &b).unwrap(), 0.0);
        }
    }

    #[test]
    fn constant_drift_gives_gradient_pairing() {
        let b = 0.7;
        let f = CoefficientField::constant(vec![b], 1.0).unwrap();
        let (tau, at, term) = (0.4, p(0.2, -0.1), p(0.5, 0.3));
        let grad =
            crate::proxy::frozen_density_derivative(&f, tau, &at, &term, &MultiIndex::new(vec![1], vec![0]).unwrap())
                .unwrap();
        // analytic gradient oracle: −⟨K⁻¹v, (1, τ)⟩ φ with v = R_τ(w, z) − (x', y')
        let (a11, a12, a22) = (tau, tau * tau / 2.0, tau * tau * tau / 3.0);
        let det = a11 * a22 - a12 * a12;
        let v = [at.x()[0] - term.x()[0], at.y()[0] + tau * at.x()[0] - term.y()[0]];
        let g = [(a22 * v[0] - a12 * v[1]) / det, (-a12 * v[0] + a11 * v[1]) / det];
        let phi = (-0.5 * (v[0] * g[0] + v[1] * g[1])).exp() / (2.0 * std::f64::consts::PI * det.sqrt());
        let oracle = -b * (g[0] + tau * g[1]) * phi;
        assert!((grad * b - oracle).abs() < 1e-13);
        let h = kernel_h(&f, tau, &at, &term).unwrap();
        assert!((h - oracle).abs() < 1e-13, "{h} {oracle}");
    }

    #[test]
    fn rejects_nonpositive_tau() {
        let f = CoefficientField::constant(vec![0.0], 1.0).unwrap();
        assert!(kernel_h(&f, 0.0, &p(0.0, 0.0), &p(0.0, 0.0)).is_err());
    }

    #[test]
    fn a_difference_vanishes_at_transported_terminal() {
        // with b = 0 the kernel is the a-difference term alone
        let f = FieldSpec {
            dim: 1,
            drift: DriftSpec::Constant { value: vec![0.0] },
            diffusion: DiffusionSpec::TrigHolder {
                base: 1.0,
                amplitude: 0.2,
                frequency: 1.3,
                exponent: 1.0,
            },
            constants: None,
        }
        .build()
        .unwrap();
        let term = p(0.4, 0.9);
        let tau = 0.5;
        let at = p(term.x()[0], term.y()[0] - term.x()[0] * tau);
        assert_eq!(kernel_h(&f, tau, &at, &term).unwrap(), 0.0);
        let off = p(term.x()[0] + 0.3, term.y()[0]);
        assert!(kernel_h(&f, tau, &off, &term).unwrap() != 0.0);
    }

    #[test]
    fn kernel_ratio_bounded_on_grid() {
        let spec = FieldSpec {
            dim: 1,
            drift: DriftSpec::Constant { value: vec![0.3] },
            diffusion: DiffusionSpec::TrigHolder {
                base: 1.0,
                amplitude: 0.2,
                frequency: 1.0,
                exponent: 0.5,
            },
            constants: None,
        };
        let f = spec.build().unwrap();
        let gamma = f.constants().gamma;
        let params = ProxyParams::new(0.3, 1).unwrap();
        let term = p(0.0, 0.0);
        let mut worst: f64 = 0.0;
        for &tau in &[0.01f64, 0.05, 0.2, 0.5, 1.0] {
            for i in -4..=4 {
                for j in -4..=4 {
                    let at = p(i as f64 * 0.5 * tau.sqrt(), j as f64 * 0.5 * tau.powf(1.5));
                    let h = kernel_h(&f, tau, &at, &term).unwrap();
                    let ph = kolmogorov_proxy_density(params, tau, &at, &term).unwrap();
                    worst = worst.max(h.abs() / (tau.powf(gamma / 2.0 - 1.0) * ph));
                }
            }
        }
        assert!(worst.is_finite() && worst < 50.0, "{worst}");
    }
}
