//! Named closed-form coefficient families, selectable from experiment configs.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{CoefficientField, Evaluator, PhasePoint, QIndex, RegularityConstants};
use crate::error::{Error, Result};
use crate::numeric::euclid;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DriftSpec {
    /// `b ≡ value`.
    Constant { value: Vec<f64> },
    /// `b = clamp(Mx·x + My·y + offset, ±clamp)` componentwise; matrices row-major.
    AffineClamped {
        matrix_x: Vec<f64>,
        matrix_y: Vec<f64>,
        offset: Vec<f64>,
        clamp: f64,
    },
    /// `b_i = amplitude · sin(freq_x·x_i + freq_y·y_i + phase)`.
    Trig {
        amplitude: f64,
        freq_x: f64,
        freq_y: f64,
        #[serde(default)]
        phase: f64,
    },
    /// `b = amplitude · exp(−(|x−cx|² + |y−cy|²)/width²) · direction`.
    GaussianBump {
        amplitude: f64,
        center: PhasePoint,
        width: f64,
        direction: Vec<f64>,
    },
    /// `b = amplitude · (1 − ρ²/radius²)₊² · direction`, `ρ² = |x−cx|² + |y−cy|²`.
    CompactBump {
        amplitude: f64,
        center: PhasePoint,
        radius: f64,
        direction: Vec<f64>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DiffusionSpec {
    /// `σ ≡ scale · I`.
    Constant { scale: f64 },
    /// `σ ≡ entries` (row-major `d × d`).
    Matrix { entries: Vec<f64> },
    /// `σ = (base + amplitude · sgn(sin u)|sin u|^exponent) · I`, `u = frequency·(Σx_i + Σy_i)`.
    TrigHolder {
        base: f64,
        amplitude: f64,
        frequency: f64,
        exponent: f64,
    },
    /// `σ = (base + amplitude · (1 − (|x−cx| + |y−cy|)/width)₊^exponent) · I`.
    HolderBump {
        base: f64,
        amplitude: f64,
        center: PhasePoint,
        width: f64,
        exponent: f64,
    },
}

/// A coefficient field described by named families.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldSpec {
    pub dim: usize,
    pub drift: DriftSpec,
    pub diffusion: DiffusionSpec,
    /// Overrides the constants derived from the families.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constants: Option<RegularityConstants>,
}

/// Perturbation directions used by the stability experiments. The perturbed
/// field is `base + ε · direction`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PerturbationFamily {
    /// `σ_ε = σ + ε·amplitude·I`.
    SigmaShift { amplitude: f64 },
    /// `σ_ε = σ + ε·amplitude·(1 − (|x−cx| + |y−cy|)/width)₊^exponent·I`.
    SigmaHolderBump {
        amplitude: f64,
        center: PhasePoint,
        width: f64,
        exponent: f64,
    },
    /// `b_ε = b + ε·amplitude·exp(−ρ²/width²)·direction`; bounded, measured with `q = ∞`.
    DriftBump {
        amplitude: f64,
        center: PhasePoint,
        width: f64,
        direction: Vec<f64>,
    },
    /// `b_ε = b + ε·amplitude·(1 − ρ²/radius²)₊²·direction`; compactly supported, measured in `L^q`.
    DriftLqBump {
        amplitude: f64,
        center: PhasePoint,
        radius: f64,
        direction: Vec<f64>,
    },
}

fn check_len(name: &'static str, v: &[f64], n: usize) -> Result<()> {
    if v.len() != n {
        return Err(Error::invalid(name, format!("expected {n} entries, got {}", v.len())));
    }
    if v.iter().any(|a| !a.is_finite()) {
        return Err(Error::invalid(name, "entries must be finite"));
    }
    Ok(())
}

fn check_positive(name: &'static str, v: f64) -> Result<()> {
    if !(v > 0.0 && v.is_finite()) {
        return Err(Error::invalid(name, format!("must be positive and finite, got {v}")));
    }
    Ok(())
}

fn check_finite(name: &'static str, v: f64) -> Result<()> {
    if !v.is_finite() {
        return Err(Error::invalid(name, format!("must be finite, got {v}")));
    }
    Ok(())
}

fn check_exponent(v: f64) -> Result<()> {
    if !(v > 0.0 && v <= 1.0) {
        return Err(Error::invalid("exponent", format!("must lie in (0, 1], got {v}")));
    }
    Ok(())
}

fn check_center(center: &PhasePoint, d: usize) -> Result<()> {
    if center.dim() != d {
        return Err(Error::invalid(
            "center",
            format!("expected dimension {d}, got {}", center.dim()),
        ));
    }
    Ok(())
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum()
}

pub(crate) fn gaussian_bump(x: &[f64], y: &[f64], c: &PhasePoint, width: f64) -> f64 {
    (-(sq_dist(x, c.x()) + sq_dist(y, c.y())) / (width * width)).exp()
}

pub(crate) fn compact_bump(x: &[f64], y: &[f64], c: &PhasePoint, radius: f64) -> f64 {
    let s = 1.0 - (sq_dist(x, c.x()) + sq_dist(y, c.y())) / (radius * radius);
    if s > 0.0 {
        s * s
    } else {
        0.0
    }
}

pub(crate) fn holder_tent(x: &[f64], y: &[f64], c: &PhasePoint, width: f64, exponent: f64) -> f64 {
    let rho = sq_dist(x, c.x()).sqrt() + sq_dist(y, c.y()).sqrt();
    let s = 1.0 - rho / width;
    if s > 0.0 {
        s.powf(exponent)
    } else {
        0.0
    }
}

fn holder_wave(u: f64, exponent: f64) -> f64 {
    let s = u.sin();
    s.signum() * s.abs().powf(exponent)
}

/// Singular-value interval of `σ` implied by `λ`, widened by a perturbation of
/// operator norm `e`; returns the ellipticity constant of the result.
fn widened_lambda(lambda: f64, e: f64) -> Result<f64> {
    let smax = lambda.sqrt() + e;
    let smin = 1.0 / lambda.sqrt() - e;
    if smin <= 0.0 {
        return Err(Error::invalid(
            "perturbation",
            "perturbation is too large to preserve uniform ellipticity",
        ));
    }
    Ok((smax * smax).max(1.0 / (smin * smin)).max(1.0))
}

impl DriftSpec {
    fn validate(&self, d: usize) -> Result<()> {
        match self {
            DriftSpec::Constant { value } => check_len("drift.value", value, d),
            DriftSpec::AffineClamped {
                matrix_x,
                matrix_y,
                offset,
                clamp,
            } => {
                check_len("drift.matrix_x", matrix_x, d * d)?;
                check_len("drift.matrix_y", matrix_y, d * d)?;
                check_len("drift.offset", offset, d)?;
                check_positive("drift.clamp", *clamp)
            }
            DriftSpec::Trig {
                amplitude,
                freq_x,
                freq_y,
                phase,
            } => {
                check_finite("drift.amplitude", *amplitude)?;
                check_finite("drift.freq_x", *freq_x)?;
                check_finite("drift.freq_y", *freq_y)?;
                check_finite("drift.phase", *phase)
            }
            DriftSpec::GaussianBump {
                amplitude,
                center,
                width,
                direction,
            } => {
                check_finite("drift.amplitude", *amplitude)?;
                check_center(center, d)?;
                check_positive("drift.width", *width)?;
                check_len("drift.direction", direction, d)
            }
            DriftSpec::CompactBump {
                amplitude,
                center,
                radius,
                direction,
            } => {
                check_finite("drift.amplitude", *amplitude)?;
                check_center(center, d)?;
                check_positive("drift.radius", *radius)?;
                check_len("drift.direction", direction, d)
            }
        }
    }

    fn sup_bound(&self, d: usize) -> f64 {
        match self {
            DriftSpec::Constant { value } => euclid(value),
            DriftSpec::AffineClamped { clamp, .. } => clamp * (d as f64).sqrt(),
            DriftSpec::Trig { amplitude, .. } => amplitude.abs() * (d as f64).sqrt(),
            DriftSpec::GaussianBump {
                amplitude, direction, ..
            }
            | DriftSpec::CompactBump {
                amplitude, direction, ..
            } => amplitude.abs() * euclid(direction),
        }
    }

    fn evaluator(&self, d: usize) -> Arc<Evaluator> {
        match self.clone() {
            DriftSpec::Constant { value } => Arc::new(move |_, _, out: &mut [f64]| out.copy_from_slice(&value)),
            DriftSpec::AffineClamped {
                matrix_x,
                matrix_y,
                offset,
                clamp,
            } => Arc::new(move |x: &[f64], y: &[f64], out: &mut [f64]| {
                for i in 0..d {
                    let mut s = offset[i];
                    for j in 0..d {
                        s += matrix_x[i * d + j] * x[j] + matrix_y[i * d + j] * y[j];
                    }
                    out[i] = s.clamp(-clamp, clamp);
                }
            }),
            DriftSpec::Trig {
                amplitude,
                freq_x,
                freq_y,
                phase,
            } => Arc::new(move |x: &[f64], y: &[f64], out: &mut [f64]| {
                for i in 0..d {
                    out[i] = amplitude * (freq_x * x[i] + freq_y * y[i] + phase).sin();
                }
            }),
            DriftSpec::GaussianBump {
                amplitude,
                center,
                width,
                direction,
            } => Arc::new(move |x: &[f64], y: &[f64], out: &mut [f64]| {
                let s = amplitude * gaussian_bump(x, y, &center, width);
                for i in 0..d {
                    out[i] = s * direction[i];
                }
            }),
            DriftSpec::CompactBump {
                amplitude,
                center,
                radius,
                direction,
            } => Arc::new(move |x: &[f64], y: &[f64], out: &mut [f64]| {
                let s = amplitude * compact_bump(x, y, &center, radius);
                for i in 0..d {
                    out[i] = s * direction[i];
                }
            }),
        }
    }
}

/// (k2, lambda, kappa, gamma) implied by a diffusion family.
struct DiffusionBounds {
    k2: f64,
    lambda: f64,
    kappa: f64,
    gamma: f64,
}

impl DiffusionSpec {
    fn validate(&self, d: usize) -> Result<()> {
        match self {
            DiffusionSpec::Constant { scale } => {
                check_finite("diffusion.scale", *scale)?;
                if *scale == 0.0 {
                    return Err(Error::invalid("diffusion.scale", "must be nonzero (ellipticity)"));
                }
                Ok(())
            }
            DiffusionSpec::Matrix { entries } => check_len("diffusion.entries", entries, d * d),
            DiffusionSpec::TrigHolder {
                base,
                amplitude,
                frequency,
                exponent,
            } => {
                check_finite("diffusion.amplitude", *amplitude)?;
                check_finite("diffusion.frequency", *frequency)?;
                check_exponent(*exponent)?;
                if !(*base > amplitude.abs()) {
                    return Err(Error::invalid(
                        "diffusion.base",
                        "must exceed |amplitude| (ellipticity)",
                    ));
                }
                Ok(())
            }
            DiffusionSpec::HolderBump {
                base,
                amplitude,
                center,
                width,
                exponent,
            } => {
                check_finite("diffusion.amplitude", *amplitude)?;
                check_center(center, d)?;
                check_positive("diffusion.width", *width)?;
                check_exponent(*exponent)?;
                if !(*base > amplitude.abs()) {
                    return Err(Error::invalid(
                        "diffusion.base",
                        "must exceed |amplitude| (ellipticity)",
                    ));
                }
                Ok(())
            }
        }
    }

    fn bounds(&self, d: usize) -> Result<DiffusionBounds> {
        Ok(match self {
            DiffusionSpec::Constant { scale } => {
                let s2 = scale * scale;
                DiffusionBounds {
                    k2: scale.abs(),
                    lambda: s2.max(1.0 / s2).max(1.0),
                    kappa: 0.0,
                    gamma: 1.0,
                }
            }
            DiffusionSpec::Matrix { entries } => {
                let m = nalgebra::DMatrix::from_row_slice(d, d, entries);
                let sv = m.singular_values();
                let smax = sv.max();
                let smin = sv.min();
                if !(smin > 0.0) {
                    return Err(Error::invalid("diffusion.entries", "matrix is singular (ellipticity)"));
                }
                DiffusionBounds {
                    k2: smax,
                    lambda: (smax * smax).max(1.0 / (smin * smin)).max(1.0),
                    kappa: 0.0,
                    gamma: 1.0,
                }
            }
            DiffusionSpec::TrigHolder {
                base,
                amplitude,
                frequency,
                exponent,
            } => {
                let hi = base + amplitude.abs();
                let lo = base - amplitude.abs();
                DiffusionBounds {
                    k2: hi,
                    lambda: (hi * hi).max(1.0 / (lo * lo)).max(1.0),
                    kappa: amplitude.abs()
                        * 2f64.powf(1.0 - exponent)
                        * (frequency.abs() * (d as f64).sqrt()).powf(*exponent),
                    gamma: *exponent,
                }
            }
            DiffusionSpec::HolderBump {
                base,
                amplitude,
                width,
                exponent,
                ..
            } => {
                let hi = base + amplitude.abs();
                let lo = base - amplitude.abs();
                DiffusionBounds {
                    k2: hi,
                    lambda: (hi * hi).max(1.0 / (lo * lo)).max(1.0),
                    kappa: amplitude.abs() * width.powf(-exponent),
                    gamma: *exponent,
                }
            }
        })
    }

    fn evaluator(&self, d: usize) -> Arc<Evaluator> {
        fn scaled_identity(out: &mut [f64], d: usize, s: f64) {
            out.fill(0.0);
            for i in 0..d {
                out[i * d + i] = s;
            }
        }
        match self.clone() {
            DiffusionSpec::Constant { scale } => Arc::new(move |_, _, out: &mut [f64]| scaled_identity(out, d, scale)),
            DiffusionSpec::Matrix { entries } => Arc::new(move |_, _, out: &mut [f64]| out.copy_from_slice(&entries)),
            DiffusionSpec::TrigHolder {
                base,
                amplitude,
                frequency,
                exponent,
            } => Arc::new(move |x: &[f64], y: &[f64], out: &mut [f64]| {
                let u = frequency * (x.iter().sum::<f64>() + y.iter().sum::<f64>());
                scaled_identity(out, d, base + amplitude * holder_wave(u, exponent));
            }),
            DiffusionSpec::HolderBump {
                base,
                amplitude,
                center,
                width,
                exponent,
            } => Arc::new(move |x: &[f64], y: &[f64], out: &mut [f64]| {
                scaled_identity(out, d, base + amplitude * holder_tent(x, y, &center, width, exponent));
            }),
        }
    }
}

impl FieldSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::invalid("dim", "must be at least 1"));
        }
        self.drift.validate(self.dim)?;
        self.diffusion.validate(self.dim)?;
        if let Some(c) = &self.constants {
            c.validate()?;
        }
        Ok(())
    }

    /// Constants implied by the families (or the explicit override).
    pub fn declared_constants(&self) -> Result<RegularityConstants> {
        self.validate()?;
        if let Some(c) = self.constants {
            return Ok(c);
        }
        let db = self.diffusion.bounds(self.dim)?;
        Ok(RegularityConstants {
            gamma: db.gamma,
            kappa: db.kappa,
            k1: self.drift.sup_bound(self.dim),
            k2: db.k2,
            lambda: db.lambda,
        })
    }

    pub fn build(&self) -> Result<CoefficientField> {
        let constants = self.declared_constants()?;
        CoefficientField::new(
            self.dim,
            self.drift.evaluator(self.dim),
            self.diffusion.evaluator(self.dim),
            constants,
        )
    }
}

impl PerturbationFamily {
    pub fn validate(&self, d: usize) -> Result<()> {
        match self {
            PerturbationFamily::SigmaShift { amplitude } => check_finite("perturbation.amplitude", *amplitude),
            PerturbationFamily::SigmaHolderBump {
                amplitude,
                center,
                width,
                exponent,
            } => {
                check_finite("perturbation.amplitude", *amplitude)?;
                check_center(center, d)?;
                check_positive("perturbation.width", *width)?;
                check_exponent(*exponent)
            }
            PerturbationFamily::DriftBump {
                amplitude,
                center,
                width,
                direction,
            } => {
                check_finite("perturbation.amplitude", *amplitude)?;
                check_center(center, d)?;
                check_positive("perturbation.width", *width)?;
                check_len("perturbation.direction", direction, d)
            }
            PerturbationFamily::DriftLqBump {
                amplitude,
                center,
                radius,
                direction,
            } => {
                check_finite("perturbation.amplitude", *amplitude)?;
                check_center(center, d)?;
                check_positive("perturbation.radius", *radius)?;
                check_len("perturbation.direction", direction, d)
            }
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            PerturbationFamily::SigmaShift { .. } => "sigma-shift",
            PerturbationFamily::SigmaHolderBump { .. } => "sigma-holder-bump",
            PerturbationFamily::DriftBump { .. } => "drift-bump",
            PerturbationFamily::DriftLqBump { .. } => "drift-lq-bump",
        }
    }

    /// Integrability index natural for the family: `∞` for bounded
    /// perturbations, `8d + 1` for the compactly supported drift bump.
    pub fn natural_q(&self, d: usize) -> QIndex {
        match self {
            PerturbationFamily::DriftLqBump { .. } => QIndex::Finite(8.0 * d as f64 + 1.0),
            _ => QIndex::Infinite,
        }
    }

    /// `base + ε·direction`, with constants widened to cover the perturbed field.
    pub fn apply(&self, base: &CoefficientField, epsilon: f64) -> Result<CoefficientField> {
        let d = base.dim();
        self.validate(d)?;
        check_finite("epsilon", epsilon)?;
        let mut c = *base.constants();
        let (drift, diffusion): (Arc<Evaluator>, Arc<Evaluator>) = match self.clone() {
            PerturbationFamily::SigmaShift { amplitude } => {
                let e = (epsilon * amplitude).abs();
                c.k2 += e;
                c.lambda = widened_lambda(c.lambda, e)?;
                let inner = base.diffusion_fn().clone();
                let shift = epsilon * amplitude;
                (
                    base.drift_fn().clone(),
                    Arc::new(move |x: &[f64], y: &[f64], out: &mut [f64]| {
                        inner(x, y, out);
                        for i in 0..d {
                            out[i * d + i] += shift;
                        }
                    }),
                )
            }
            PerturbationFamily::SigmaHolderBump {
                amplitude,
                center,
                width,
                exponent,
            } => {
                let e = (epsilon * amplitude).abs();
                c.k2 += e;
                c.lambda = widened_lambda(c.lambda, e)?;
                c.gamma = c.gamma.min(exponent);
                c.kappa += e * width.powf(-exponent);
                let inner = base.diffusion_fn().clone();
                let scale = epsilon * amplitude;
                (
                    base.drift_fn().clone(),
                    Arc::new(move |x: &[f64], y: &[f64], out: &mut [f64]| {
                        inner(x, y, out);
                        let s = scale * holder_tent(x, y, &center, width, exponent);
                        for i in 0..d {
                            out[i * d + i] += s;
                        }
                    }),
                )
            }
            PerturbationFamily::DriftBump {
                amplitude,
                center,
                width,
                direction,
            } => {
                c.k1 += (epsilon * amplitude).abs() * euclid(&direction);
                let inner = base.drift_fn().clone();
                let scale = epsilon * amplitude;
                (
                    Arc::new(move |x: &[f64], y: &[f64], out: &mut [f64]| {
                        inner(x, y, out);
                        let s = scale * gaussian_bump(x, y, &center, width);
                        for i in 0..d {
                            out[i] += s * direction[i];
                        }
                    }),
                    base.diffusion_fn().clone(),
                )
            }
            PerturbationFamily::DriftLqBump {
                amplitude,
                center,
                radius,
                direction,
            } => {
                c.k1 += (epsilon * amplitude).abs() * euclid(&direction);
                let inner = base.drift_fn().clone();
                let scale = epsilon * amplitude;
                (
                    Arc::new(move |x: &[f64], y: &[f64], out: &mut [f64]| {
                        inner(x, y, out);
                        let s = scale * compact_bump(x, y, &center, radius);
                        for i in 0..d {
                            out[i] += s * direction[i];
                        }
                    }),
                    base.diffusion_fn().clone(),
                )
            }
        };
        CoefficientField::new(d, drift, diffusion, c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_family_constants() {
        let spec = FieldSpec {
            dim: 1,
            drift: DriftSpec::Constant { value: vec![0.5] },
            diffusion: DiffusionSpec::Constant { scale: 2.0 },
            constants: None,
        };
        let c = spec.declared_constants().unwrap();
        assert_eq!(c.k1, 0.5);
        assert_eq!(c.k2, 2.0);
        assert_eq!(c.lambda, 4.0);
        assert_eq!(c.gamma, 1.0);
    }

    #[test]
    fn toml_roundtrip_of_field_spec() {
        let spec = FieldSpec {
            dim: 1,
            drift: DriftSpec::Trig {
                amplitude: 0.3,
                freq_x: 1.0,
                freq_y: 0.0,
                phase: 0.0,
            },
            diffusion: DiffusionSpec::TrigHolder {
                base: 1.0,
                amplitude: 0.1,
                frequency: 1.0,
                exponent: 0.5,
            },
            constants: None,
        };
        let text = toml::to_string(&spec).unwrap();
        let back: FieldSpec = toml::from_str(&text).unwrap();
        assert_eq!(back, spec);
        assert!(text.contains("family = \"trig-holder\""), "{text}");
    }

    #[test]
    fn rejects_non_elliptic_holder_family() {
        let spec = FieldSpec {
            dim: 1,
            drift: DriftSpec::Constant { value: vec![0.0] },
            diffusion: DiffusionSpec::TrigHolder {
                base: 0.1,
                amplitude: 0.2,
                frequency: 1.0,
                exponent: 0.5,
            },
            constants: None,
        };
        assert!(spec.build().is_err());
    }

    #[test]
    fn sigma_shift_adds_to_diagonal() {
        let base = CoefficientField::constant(vec![0.0, 0.0], 1.0).unwrap();
        let p = PerturbationFamily::SigmaShift { amplitude: 1.0 };
        let f = p.apply(&base, 0.1).unwrap();
        let s = f.sigma(&PhasePoint::origin(2)).unwrap();
        assert_eq!(s[(0, 0)], 1.1);
        assert_eq!(s[(0, 1)], 0.0);
        assert!(f.constants().lambda >= base.constants().lambda);
    }

    #[test]
    fn holder_tent_vanishes_outside_support() {
        let c = PhasePoint::scalar(0.0, 0.0);
        assert_eq!(holder_tent(&[2.0], &[0.0], &c, 1.0, 0.5), 0.0);
        assert_eq!(holder_tent(&[0.0], &[0.0], &c, 1.0, 0.5), 1.0);
    }
}
