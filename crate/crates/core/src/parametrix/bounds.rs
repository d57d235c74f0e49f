//! Beta/Gamma envelopes for the iterated kernels.

use libm::{lgamma, tgamma};

use crate::error::{Error, Result};
use crate::model::{PerturbationNorms, QIndex};

fn check_gamma(gamma: f64) -> Result<()> {
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::invalid("gamma", format!("must lie in (0, 1], got {gamma}")));
    }
    Ok(())
}

fn check_scale(c: f64) -> Result<()> {
    if !(c >= 1.0 && c.is_finite()) {
        return Err(Error::invalid("C", format!("must be finite and at least 1, got {c}")));
    }
    Ok(())
}

fn check_time(t: f64) -> Result<()> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::invalid("t", format!("must be finite and nonnegative, got {t}")));
    }
    Ok(())
}

/// `B(p, q) = Γ(p)Γ(q)/Γ(p+q)` through log-Gamma.
pub fn beta_function(p: f64, q: f64) -> Result<f64> {
    if !(p > 0.0 && p.is_finite()) || !(q > 0.0 && q.is_finite()) {
        return Err(Error::invalid(
            "beta",
            format!("arguments must be positive and finite, got ({p}, {q})"),
        ));
    }
    Ok((lgamma(p) + lgamma(q) - lgamma(p + q)).exp())
}

/// `C^{r+1} t^{rγ/2} Γ(γ/2)^r / Γ(1 + rγ/2)`.
pub fn lemma1_bound(r: usize, t: f64, gamma: f64, big_c: f64) -> Result<f64> {
    check_gamma(gamma)?;
    check_scale(big_c)?;
    check_time(t)?;
    if r == 0 {
        return Ok(big_c);
    }
    if t == 0.0 {
        return Ok(0.0);
    }
    Ok(lemma1_log_bound(r, t, gamma, big_c)?.exp())
}

/// Natural log of [`lemma1_bound`], finite where the bound itself overflows.
pub fn lemma1_log_bound(r: usize, t: f64, gamma: f64, big_c: f64) -> Result<f64> {
    check_gamma(gamma)?;
    check_scale(big_c)?;
    check_time(t)?;
    let rf = r as f64;
    let h = 0.5 * gamma;
    if r == 0 {
        return Ok(big_c.ln());
    }
    Ok((rf + 1.0) * big_c.ln() + rf * h * t.ln() + rf * lgamma(h) - lgamma(1.0 + rf * h))
}

/// `Σ_{r ≥ first}` of the envelope times `scale`, summed in log space.
/// Returns `+∞` when the sum exceeds the floating range or has not settled
/// after `max_terms` ranks.
pub fn lemma1_tail(first: usize, t: f64, gamma: f64, big_c: f64, scale: f64, max_terms: usize) -> Result<f64> {
    if !(scale >= 0.0) {
        return Err(Error::invalid("scale", "must be nonnegative"));
    }
    if scale == 0.0 || t == 0.0 {
        return Ok(0.0);
    }
    let log_scale = scale.ln();
    let mut log_sum = f64::NEG_INFINITY;
    let mut prev = f64::INFINITY;
    for r in first..first.saturating_add(max_terms) {
        let lb = lemma1_log_bound(r, t, gamma, big_c)? + log_scale;
        log_sum = if log_sum == f64::NEG_INFINITY {
            lb
        } else {
            let m = log_sum.max(lb);
            m + ((log_sum - m).exp() + (lb - m).exp()).ln()
        };
        // past the peak and negligible
        if lb < prev && lb < log_sum - 40.0 {
            return Ok(log_sum.exp());
        }
        prev = lb;
    }
    Ok(f64::INFINITY)
}

/// Same envelope as [`lemma1_bound`] written as a product of Beta values.
pub fn lemma1_bound_product(r: usize, t: f64, gamma: f64, big_c: f64) -> Result<f64> {
    check_gamma(gamma)?;
    check_scale(big_c)?;
    check_time(t)?;
    let h = 0.5 * gamma;
    let mut prod = big_c.powi(r as i32 + 1) * t.powf(r as f64 * h);
    for k in 0..r {
        prod *= beta_function(1.0 + k as f64 * h, h)?;
    }
    Ok(prod)
}

/// `C^r r Δ {t^{rγ/2}/Γ(1+rγ/2) + t^{(r+2)γ/2}/Γ(1+(r+2)γ/2)}`.
pub fn lemma4_difference_bound(
    r: usize,
    t: f64,
    gamma: f64,
    q: QIndex,
    big_c: f64,
    delta: &PerturbationNorms,
) -> Result<f64> {
    check_gamma(gamma)?;
    check_scale(big_c)?;
    check_time(t)?;
    q.validate()?;
    if !(delta.delta_total >= 0.0 && delta.delta_total.is_finite()) {
        return Err(Error::invalid("delta", "must be finite and nonnegative"));
    }
    let rf = r as f64;
    let h = 0.5 * gamma;
    let a = t.powf(rf * h) / tgamma(1.0 + rf * h);
    let b = t.powf((rf + 2.0) * h) / tgamma(1.0 + (rf + 2.0) * h);
    Ok(big_c.powi(r as i32) * rf * delta.delta_total * (a + b))
}

/// Integrability exponent `α(q) = 1/2 − 2d/q` (`1/2` for `q = ∞`).
pub fn alpha_q(q: QIndex, d: usize) -> Result<f64> {
    q.validate_for_dim(d)?;
    Ok(match q {
        QIndex::Infinite => 0.5,
        QIndex::Finite(q) => 0.5 - 2.0 * d as f64 / q,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    /// Composite Gauss–Legendre of the defining integral after `u = v²` on
    /// `[0, 1/2]` and `1 − u = v²` on `[1/2, 1]`, which removes the endpoint
    /// singularities for exponents ≥ 1/2.
    fn beta_quadrature(p: f64, q: f64) -> f64 {
        let rule = crate::numeric::gauss_legendre_unit(20).unwrap();
        let f = |u: f64| u.powf(p - 1.0) * (1.0 - u).powf(q - 1.0);
        let r = 0.5f64.sqrt();
        let panels = 200;
        let mut total = 0.0;
        for k in 0..panels {
            for &(x, w) in &rule {
                let v = r * (k as f64 + x) / panels as f64;
                let dv = r * w / panels as f64;
                total += dv * 2.0 * v * (f(v * v) + f(1.0 - v * v));
            }
        }
        total
    }

    #[test]
    fn beta_values() {
        assert!((beta_function(1.0, 1.0).unwrap() - 1.0).abs() < 1e-14);
        assert!((beta_function(1.0, 0.5).unwrap() - 2.0).abs() < 1e-14);
        let b = beta_function(1.5, 0.5).unwrap();
        assert!((b - PI / 2.0).abs() < 1e-13);
        assert!((b - beta_quadrature(1.5, 0.5)).abs() < 1e-8);
        assert!(beta_function(0.0, 1.0).is_err());
        assert!(beta_function(1.0, -1.0).is_err());
    }

    #[test]
    fn beta_relative_accuracy_over_range() {
        // B(p, 1) = 1/p and B(p, 2) = 1/(p(p+1)) in closed form
        for &p in &[1e-3, 0.1, 1.0, 7.5, 100.0, 1e3] {
            let b1 = beta_function(p, 1.0).unwrap();
            assert!((b1 * p - 1.0).abs() < 1e-12, "{p}");
            let b2 = beta_function(p, 2.0).unwrap();
            assert!((b2 * p * (p + 1.0) - 1.0).abs() < 1e-12, "{p}");
        }
    }

    #[test]
    fn lemma1_values() {
        assert_eq!(lemma1_bound(0, 0.7, 0.5, 3.0).unwrap(), 3.0);
        let independent = beta_function(1.0, 0.5).unwrap() * beta_function(1.5, 0.5).unwrap();
        let v = lemma1_bound(2, 1.0, 1.0, 1.0).unwrap();
        assert!((v - independent).abs() < 1e-13);
        assert!((v - PI).abs() < 1e-13);
    }

    #[test]
    fn telescoping_identity() {
        for &g in &[0.3, 0.5, 1.0] {
            for r in 0..=20 {
                let a = lemma1_bound(r, 0.8, g, 1.7).unwrap();
                let b = lemma1_bound_product(r, 0.8, g, 1.7).unwrap();
                assert!((a - b).abs() <= 1e-10 * a, "γ={g} r={r}: {a} {b}");
            }
        }
    }

    #[test]
    fn lemma1_series_converges() {
        for &(t, g, c) in &[(1.0, 1.0, 1.0), (0.5, 0.5, 1.0), (1.0, 1.0, 3.0)] {
            let mut acc = 0.0;
            let mut partial = Vec::new();
            for r in 0..2000 {
                acc += lemma1_bound(r, t, g, c).unwrap();
                partial.push(acc);
            }
            let last = partial[1999];
            assert!(last.is_finite());
            assert!((partial[1998] - last).abs() <= 1e-14 * last);
            let tail = lemma1_tail(0, t, g, c, 1.0, 1_000_000).unwrap();
            assert!((tail - last).abs() <= 1e-10 * last, "{tail} {last}");
        }
        // ratio test: the log-ratio of consecutive ranks eventually turns negative
        for &(t, g, c) in &[(1.0, 0.3, 2.0), (1.0, 0.5, 5.0)] {
            let r = 1_000_000_000;
            let step = lemma1_log_bound(r + 1, t, g, c).unwrap() - lemma1_log_bound(r, t, g, c).unwrap();
            assert!(step < 0.0, "{step}");
        }
    }

    #[test]
    fn lemma4_values() {
        let zero = PerturbationNorms::zero(QIndex::Infinite);
        assert_eq!(
            lemma4_difference_bound(3, 1.0, 1.0, QIndex::Infinite, 2.0, &zero).unwrap(),
            0.0
        );
        let d = PerturbationNorms::new(0.1, 0.0, 0.0, QIndex::Infinite);
        assert_eq!(
            lemma4_difference_bound(0, 1.0, 1.0, QIndex::Infinite, 2.0, &d).unwrap(),
            0.0
        );
        let v = lemma4_difference_bound(1, 1.0, 1.0, QIndex::Infinite, 1.0, &d).unwrap();
        let sp = PI.sqrt();
        let oracle = 0.1 * (2.0 / sp + 4.0 / (3.0 * sp));
        assert!((v - oracle).abs() < 1e-14);
        assert!((v - 0.18806).abs() < 1e-5);
    }

    #[test]
    fn alpha_values() {
        assert_eq!(alpha_q(QIndex::Infinite, 1).unwrap(), 0.5);
        assert!((alpha_q(QIndex::Finite(9.0), 1).unwrap() - (0.5 - 2.0 / 9.0)).abs() < 1e-15);
        assert!(alpha_q(QIndex::Finite(4.0), 1).is_err());
    }
}
