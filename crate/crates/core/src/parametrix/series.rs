use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::bounds::{lemma1_bound, lemma1_tail};
use super::kernel::KernelFrame;
use super::scheme::{Bridge, ConvolutionScheme, PreparedScheme};
use crate::error::{Error, Result};
use crate::model::{diffusion_matrix, CoefficientField, PhasePoint};
use crate::numeric::{fmt_point, pairwise_sum};
use crate::proxy::{proxy_density_raw, FrozenGaussian};

const TAIL_TERMS: usize = 200_000;

/// Truncated parametrix series at one query point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesResult {
    /// Requested truncation rank.
    pub order: usize,
    /// `p̃ ⊗ H^{(r)}` for `r = 0..=order` (fewer when truncated).
    pub terms: Vec<f64>,
    pub value: f64,
    /// Envelope `C^{r+1} t^{rγ/2} Γ(γ/2)^r/Γ(1+rγ/2) · p̂_c` per rank.
    pub bound_terms: Vec<f64>,
    /// Envelope mass beyond the last computed rank.
    pub tail_estimate: f64,
    /// Node-halving difference of the partial sum.
    pub error_estimate: f64,
    /// Partial sum under the halved scheme.
    pub coarse_value: f64,
    pub notice: Option<String>,
}

/// Value and node-halving error of a single convolution.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvolutionResult {
    pub value: f64,
    pub error_estimate: f64,
}

/// Space-time evaluator `(time, start, end) ↦ value` on stacked points.
pub type SpaceTimeFn<'a> = dyn Fn(f64, &[f64], &[f64]) -> f64 + Sync + 'a;

fn reference_matrix(
    scheme: &ConvolutionScheme,
    field: Option<&CoefficientField>,
    to: &PhasePoint,
) -> Result<DMatrix<f64>> {
    let d = to.dim();
    match (&scheme.reference, field) {
        (Some(r), _) => {
            if r.len() != d * d {
                return Err(Error::invalid("reference", format!("expected {} entries", d * d)));
            }
            Ok(DMatrix::from_row_slice(d, d, r))
        }
        (None, Some(f)) => diffusion_matrix(f, to),
        (None, None) => Ok(DMatrix::identity(d, d)),
    }
}

fn check_horizon(t: f64) -> Result<()> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::invalid("t", format!("must be positive and finite, got {t}")));
    }
    Ok(())
}

fn quadrature_error(u: f64, eta: &[f64]) -> Error {
    let d = eta.len() / 2;
    Error::Quadrature {
        u,
        point: format!("({}, {})", fmt_point(&eta[..d]), fmt_point(&eta[d..])),
    }
}

fn convolve_once(
    f: &SpaceTimeFn<'_>,
    g: &SpaceTimeFn<'_>,
    t: f64,
    start: &[f64],
    end: &[f64],
    prep: &PreparedScheme,
    a_ref: &DMatrix<f64>,
) -> Result<f64> {
    let n = start.len();
    let blocks: Vec<Vec<f64>> = prep
        .time_nodes(t)
        .par_iter()
        .map(|&(u, wu)| {
            let bridge = Bridge::new(a_ref, start, u, t - u, end, prep.inflation())?;
            let mut eta = vec![0.0; n];
            prep.space_nodes(0)
                .iter()
                .map(|(z, w)| {
                    let inv_q = bridge.place(z, &mut eta);
                    let v = wu * w * inv_q * f(u, start, &eta) * g(t - u, &eta, end);
                    if v.is_finite() {
                        Ok(v)
                    } else {
                        Err(quadrature_error(u, &eta))
                    }
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    Ok(pairwise_sum(&blocks.concat()))
}

/// `(f ⊗ g)(t, from, to) = ∫₀ᵗ du ∫ dη f(u, from, η) g(t − u, η, to)`.
/// The bridge reference is `scheme.reference` or the identity.
pub fn time_space_convolve(
    f: &SpaceTimeFn<'_>,
    g: &SpaceTimeFn<'_>,
    t: f64,
    from: &PhasePoint,
    to: &PhasePoint,
    scheme: &ConvolutionScheme,
) -> Result<ConvolutionResult> {
    check_horizon(t)?;
    if from.dim() != to.dim() {
        return Err(Error::invalid("point", "start and end dimensions differ"));
    }
    let a_ref = reference_matrix(scheme, None, to)?;
    let d = from.dim();
    let (start, end) = (from.stacked(), to.stacked());
    let fine = convolve_once(f, g, t, &start, &end, &PreparedScheme::new(scheme, d, 1)?, &a_ref)?;
    let coarse = convolve_once(
        f,
        g,
        t,
        &start,
        &end,
        &PreparedScheme::new(&scheme.coarsened(), d, 1)?,
        &a_ref,
    )?;
    Ok(ConvolutionResult {
        value: fine,
        error_estimate: (fine - coarse).abs(),
    })
}

struct Engine<'a> {
    field: &'a CoefficientField,
    prep: PreparedScheme,
    a_ref: DMatrix<f64>,
    start: Vec<f64>,
}

impl Engine<'_> {
    /// `[F_0, …, F_level](s, ζ)` where `F_0 = p̃(s, ξ, ·)` and `F_r = F_{r−1} ⊗ H`.
    fn eval(&self, depth: usize, level: usize, s: f64, zeta: &[f64], parallel: bool) -> Result<Vec<f64>> {
        let d = self.prep.d;
        let rule = &self.prep.covariance_rule;
        let mut out = vec![0.0; level + 1];
        out[0] = FrozenGaussian::build(self.field, s, zeta, rule)?.density_raw(&self.start[..d], &self.start[d..]);
        if level == 0 {
            return Ok(out);
        }
        let space = self.prep.space_nodes(depth);
        let per_time = |&(u, wu): &(f64, f64)| -> Result<Vec<Vec<f64>>> {
            let frame = KernelFrame::build(self.field, s - u, zeta, rule)?;
            let bridge = Bridge::new(&self.a_ref, &self.start, u, s - u, zeta, self.prep.inflation())?;
            let mut eta = vec![0.0; 2 * d];
            space
                .iter()
                .map(|(z, w)| {
                    let inv_q = bridge.place(z, &mut eta);
                    let h = frame.eval(self.field, &eta[..d], &eta[d..]);
                    let weight = wu * w * inv_q * h;
                    if !weight.is_finite() {
                        return Err(quadrature_error(u, &eta));
                    }
                    let sub = self.eval(depth + 1, level - 1, u, &eta, false)?;
                    let contrib: Vec<f64> = sub.iter().map(|v| weight * v).collect();
                    if contrib.iter().any(|v| !v.is_finite()) {
                        return Err(quadrature_error(u, &eta));
                    }
                    Ok(contrib)
                })
                .collect()
        };
        let times = self.prep.time_nodes(s);
        let blocks: Vec<Vec<Vec<f64>>> = if parallel {
            times.par_iter().map(per_time).collect::<Result<_>>()?
        } else {
            times.iter().map(per_time).collect::<Result<_>>()?
        };
        let flat: Vec<&Vec<f64>> = blocks.iter().flatten().collect();
        let mut column = Vec::with_capacity(flat.len());
        for r in 1..=level {
            column.clear();
            column.extend(flat.iter().map(|c| c[r - 1]));
            out[r] = pairwise_sum(&column);
        }
        Ok(out)
    }
}

fn run_terms(
    field: &CoefficientField,
    t: f64,
    from: &PhasePoint,
    to: &PhasePoint,
    order: usize,
    scheme: &ConvolutionScheme,
    a_ref: &DMatrix<f64>,
) -> Result<Vec<f64>> {
    let engine = Engine {
        field,
        prep: PreparedScheme::new(scheme, field.dim(), order.max(1))?,
        a_ref: a_ref.clone(),
        start: from.stacked(),
    };
    engine.eval(0, order, t, &to.stacked(), true)
}

/// Truncated series `Σ_{r=0}^{R} p̃ ⊗ H^{(r)}` at `(t, from, to)`.
pub fn parametrix_series(
    field: &CoefficientField,
    t: f64,
    from: &PhasePoint,
    to: &PhasePoint,
    order: usize,
    scheme: &ConvolutionScheme,
) -> Result<SeriesResult> {
    check_horizon(t)?;
    scheme.validate()?;
    field.check_dim(from)?;
    field.check_dim(to)?;
    let gamma = field.constants().gamma;
    let env = scheme.envelope;
    let proxy = proxy_density_raw(env.c, t, from.x(), from.y(), to.x(), to.y());

    let mut bound_terms = Vec::with_capacity(order + 1);
    let mut notice = None;
    for r in 0..=order {
        let b = lemma1_bound(r, t, gamma, env.big_c)? * proxy;
        if b == 0.0 || !b.is_finite() {
            notice = Some(format!(
                "envelope underflows at rank {r}; series truncated at rank {}",
                r.saturating_sub(1)
            ));
            break;
        }
        bound_terms.push(b);
    }
    if bound_terms.is_empty() {
        return Err(Error::invalid(
            "order",
            "envelope underflows at rank 0; query point is outside the bulk",
        ));
    }
    let effective = bound_terms.len() - 1;

    let a_ref = reference_matrix(scheme, Some(field), to)?;
    let terms = run_terms(field, t, from, to, effective, scheme, &a_ref)?;
    let value = terms.iter().sum::<f64>();
    let abs_sum: f64 = terms.iter().map(|v| v.abs()).sum();
    let coarse_value = if effective == 0 {
        value
    } else {
        run_terms(field, t, from, to, effective, &scheme.coarsened(), &a_ref)?
            .iter()
            .sum::<f64>()
    };
    let error_estimate = (value - coarse_value).abs().max(1e-13 * abs_sum);
    let tail_estimate = lemma1_tail(effective + 1, t, gamma, env.big_c, proxy, TAIL_TERMS)?;
    Ok(SeriesResult {
        order,
        terms,
        value,
        bound_terms,
        tail_estimate,
        error_estimate,
        coarse_value,
        notice,
    })
}

/// [`parametrix_series`] at many terminal points, evaluated in parallel.
pub fn parametrix_series_batch(
    field: &CoefficientField,
    t: f64,
    from: &PhasePoint,
    points: &[PhasePoint],
    order: usize,
    scheme: &ConvolutionScheme,
) -> Result<Vec<SeriesResult>> {
    points
        .par_iter()
        .map(|to| parametrix_series(field, t, from, to, order, scheme))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parametrix::SpaceRule;
    use crate::proxy::{kolmogorov_proxy_density, ProxyParams};
    use crate::test_support::drift_taylor_term;

    fn p(x: f64, y: f64) -> PhasePoint {
        PhasePoint::scalar(x, y)
    }

    #[test]
    fn taylor_oracle_sums_to_shifted_gaussian() {
        let (b, t) = (0.5, 1.0);
        let (from, to) = (p(0.1, -0.2), p(0.9, 0.4));
        let sum: f64 = (0..40).map(|r| drift_taylor_term(b, t, &from, &to, r)).sum();
        let shifted_from = p(0.0, 0.0);
        let shifted_to = p(
            to.x()[0] - from.x()[0] - b * t,
            to.y()[0] - from.y()[0] - from.x()[0] * t - b * t * t / 2.0,
        );
        let exact = drift_taylor_term(0.0, t, &shifted_from, &shifted_to, 0);
        assert!((sum - exact).abs() < 1e-14);
    }

    #[test]
    fn convolution_of_zero_is_zero() {
        let f = |_: f64, _: &[f64], _: &[f64]| 1.0;
        let g = |_: f64, _: &[f64], _: &[f64]| 0.0;
        let r = time_space_convolve(&f, &g, 1.0, &p(0.0, 0.0), &p(0.1, 0.1), &ConvolutionScheme::default()).unwrap();
        assert_eq!(r.value, 0.0);
    }

    #[test]
    fn proxy_convolution_collapses_by_semigroup() {
        let c = 0.5;
        let prox = move |s: f64, a: &[f64], b: &[f64]| proxy_density_raw(c, s, &a[..1], &a[1..], &b[..1], &b[1..]);
        let scheme = ConvolutionScheme {
            reference: Some(vec![2.0 / c]),
            ..Default::default()
        };
        let (t, from, to) = (0.8, p(0.2, -0.1), p(-0.3, 0.5));
        let r = time_space_convolve(&prox, &prox, t, &from, &to, &scheme).unwrap();
        let want = t * kolmogorov_proxy_density(ProxyParams::new(c, 1).unwrap(), t, &from, &to).unwrap();
        assert!((r.value - want).abs() < 1e-12 * want, "{} {}", r.value, want);
    }

    #[test]
    fn convolution_is_linear() {
        let c = 1.0;
        let prox = move |s: f64, a: &[f64], b: &[f64]| proxy_density_raw(c, s, &a[..1], &a[1..], &b[..1], &b[1..]);
        let scaled = move |s: f64, a: &[f64], b: &[f64]| 3.5 * prox(s, a, b);
        let scheme = ConvolutionScheme::default();
        let (from, to) = (p(0.0, 0.0), p(0.3, 0.2));
        let a = time_space_convolve(&prox, &prox, 1.0, &from, &to, &scheme)
            .unwrap()
            .value;
        let b = time_space_convolve(&scaled, &prox, 1.0, &from, &to, &scheme)
            .unwrap()
            .value;
        assert!((b - 3.5 * a).abs() < 1e-14 * b.abs());
    }

    #[test]
    fn first_term_matches_taylor_oracle() {
        let b = 0.5;
        let f = CoefficientField::constant(vec![b], 1.0).unwrap();
        let from = p(0.0, 0.0);
        for to in [p(0.5, 0.25), p(1.2, 0.9), p(-0.4, 0.1)] {
            let s = parametrix_series(&f, 1.0, &from, &to, 1, &ConvolutionScheme::default()).unwrap();
            let oracle = drift_taylor_term(b, 1.0, &from, &to, 1);
            assert!(
                (s.terms[1] - oracle).abs() < 1e-4 * oracle.abs().max(1e-3),
                "{} vs {oracle}",
                s.terms[1]
            );
            let t0 = drift_taylor_term(b, 1.0, &from, &to, 0);
            assert!((s.terms[0] - t0).abs() < 1e-14);
        }
    }

    #[test]
    fn degenerate_case_terms_vanish() {
        let f = CoefficientField::constant(vec![0.0], 1.0).unwrap();
        let s = parametrix_series(&f, 1.0, &p(0.0, 0.0), &p(0.3, 0.1), 2, &ConvolutionScheme::default()).unwrap();
        assert_eq!(&s.terms[1..], &[0.0, 0.0]);
        assert_eq!(s.value, s.terms.iter().sum::<f64>());
        assert!(s.bound_terms.len() == 3);
    }

    #[test]
    fn monte_carlo_rule_estimates_first_term() {
        let b = 0.5;
        let f = CoefficientField::constant(vec![b], 1.0).unwrap();
        let scheme = ConvolutionScheme {
            space_rule: SpaceRule::MonteCarlo,
            space_nodes: 64000,
            seed: 11,
            ..Default::default()
        };
        let (from, to) = (p(0.0, 0.0), p(0.8, 0.5));
        let s = parametrix_series(&f, 1.0, &from, &to, 1, &scheme).unwrap();
        let oracle = drift_taylor_term(b, 1.0, &from, &to, 1);
        assert!(
            (s.terms[1] - oracle).abs() < 0.05 * oracle.abs(),
            "{} vs {oracle}",
            s.terms[1]
        );
    }

    #[test]
    fn tail_nonincreasing_in_order() {
        let f = CoefficientField::constant(vec![0.2], 1.0).unwrap();
        let scheme = ConvolutionScheme {
            time_nodes: 4,
            space_nodes: 3,
            ..Default::default()
        };
        let tails: Vec<f64> = (0..3)
            .map(|r| {
                parametrix_series(&f, 0.5, &p(0.0, 0.0), &p(0.1, 0.0), r, &scheme)
                    .unwrap()
                    .tail_estimate
            })
            .collect();
        assert!(tails.windows(2).all(|w| w[1] <= w[0]), "{tails:?}");
    }
}
