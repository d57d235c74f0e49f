//! Empirical stability of the transition density under coefficient
//! perturbations: paired density differences normalized by `Δ_total · p̂_c`.

mod calibrate;
mod difference;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

pub use calibrate::{
    big_c_ladder, calibrate_envelope, calibrate_proxy_constants, fit_proxy_constants, BatteryGrid, DensitySample,
    EnvelopeCalibration, LadderEntry, ProxyCalibration, C_LADDER,
};
pub use difference::{
    density_difference, difference, mc_density_field, series_density_field, shared_references, DensityField,
    DifferenceGrid, Discretization, Method, MethodConfig,
};

use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::model::{
    perturbation_norms, CoefficientField, NormSampling, PerturbationFamily, PerturbationNorms, PerturbationPair,
    PhasePoint, QIndex,
};
use crate::proxy::proxy_density_raw;

pub const SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_THRESHOLD: f64 = 1e-12;
pub const DEFAULT_SWEEP: [f64; 4] = [0.01, 0.02, 0.05, 0.1];

/// Ratio statistics of one method.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodResult {
    pub method: Method,
    pub base: Vec<f64>,
    pub perturbed: Vec<f64>,
    pub diff: Vec<f64>,
    pub band: Vec<f64>,
    /// `p̂_{c_used}` per node.
    pub proxy: Vec<f64>,
    /// `diff / (Δ_total · p̂)`, absent where the proxy is below the threshold.
    pub ratio: Vec<Option<f64>>,
    pub c_empirical: f64,
    pub sup_diff: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub epsilon: f64,
    pub method: Method,
    pub delta_total: f64,
    pub sup_diff: f64,
    pub c_empirical: f64,
}

/// Per-method summary of an ε-sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub method: Method,
    /// Least-squares slope of `log sup diff` against `log ε`.
    pub slope: Option<f64>,
    /// `max C_empirical / min C_empirical − 1`.
    pub spread: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub schema_version: u32,
    pub t: f64,
    pub from: PhasePoint,
    pub grid: GridSpec,
    pub family: Option<PerturbationFamily>,
    pub epsilon: Option<f64>,
    pub norms: PerturbationNorms,
    pub c_used: f64,
    pub threshold: f64,
    pub method: Method,
    pub config: MethodConfig,
    pub sampling: Option<NormSampling>,
    pub calibration: Option<ProxyCalibration>,
    pub results: Vec<MethodResult>,
    /// Largest per-method `C_empirical`.
    pub c_empirical: f64,
    pub epsilon_sweep: Vec<SweepPoint>,
    pub sweep_summary: Vec<SweepSummary>,
}

/// Inputs of [`stability_ratio`].
#[derive(Clone, Debug)]
pub struct RatioInputs {
    pub t: f64,
    pub from: PhasePoint,
    pub grid: GridSpec,
    pub norms: PerturbationNorms,
    pub differences: Vec<DifferenceGrid>,
    pub c_used: f64,
    pub threshold: f64,
    pub config: MethodConfig,
}

fn method_result(inputs: &RatioInputs, g: &DifferenceGrid, points: &[PhasePoint]) -> Result<MethodResult> {
    if g.diff.len() != points.len() {
        return Err(Error::invalid(
            "differences",
            "grid size does not match the difference values",
        ));
    }
    let delta = inputs.norms.delta_total;
    let (from, t) = (&inputs.from, inputs.t);
    let proxy: Vec<f64> = points
        .iter()
        .map(|to| proxy_density_raw(inputs.c_used, t, from.x(), from.y(), to.x(), to.y()))
        .collect();
    let ratio: Vec<Option<f64>> = g
        .diff
        .iter()
        .zip(&proxy)
        .map(|(dv, pv)| (*pv >= inputs.threshold).then(|| dv / (delta * pv)))
        .collect();
    let c_empirical = ratio
        .iter()
        .flatten()
        .copied()
        .reduce(f64::max)
        .ok_or_else(|| Error::invalid("grid", "no node has a proxy value above the threshold"))?;
    if !c_empirical.is_finite() {
        return Err(Error::NonFinite {
            what: "stability ratio",
            point: "grid".into(),
        });
    }
    Ok(MethodResult {
        method: g.method,
        base: g.base.clone(),
        perturbed: g.perturbed.clone(),
        diff: g.diff.clone(),
        band: g.band.clone(),
        proxy,
        ratio,
        c_empirical,
        sup_diff: g.sup_diff(),
    })
}

/// Ratio grid and `C_empirical` per method.
pub fn stability_ratio(inputs: RatioInputs) -> Result<StabilityReport> {
    let delta = inputs.norms.delta_total;
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::invalid(
            "delta_total",
            "perturbation norm is zero; the ratio is undefined, use density_difference directly",
        ));
    }
    if !(inputs.c_used > 0.0 && inputs.c_used.is_finite()) {
        return Err(Error::invalid("c_used", "must be positive and finite"));
    }
    if !(inputs.threshold >= 0.0) {
        return Err(Error::invalid("threshold", "must be nonnegative"));
    }
    let points = inputs.grid.points(inputs.from.dim())?;
    let results = inputs
        .differences
        .iter()
        .map(|g| method_result(&inputs, g, &points))
        .collect::<Result<Vec<_>>>()?;
    let c_empirical = results.iter().map(|r| r.c_empirical).fold(0.0, f64::max);
    let method = match results.as_slice() {
        [one] => one.method,
        _ => Method::Both,
    };
    Ok(StabilityReport {
        schema_version: SCHEMA_VERSION,
        t: inputs.t,
        from: inputs.from,
        grid: inputs.grid,
        family: None,
        epsilon: None,
        norms: inputs.norms,
        c_used: inputs.c_used,
        threshold: inputs.threshold,
        method,
        config: inputs.config,
        sampling: None,
        calibration: None,
        results,
        c_empirical,
        epsilon_sweep: Vec::new(),
        sweep_summary: Vec::new(),
    })
}

/// Least-squares slope of `ys` against `xs`.
pub fn log_log_slope(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = xs
        .iter()
        .zip(ys)
        .filter(|(x, y)| **x > 0.0 && **y > 0.0)
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Proxy constant for the ratio: fixed, or fitted on the base density.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ProxyChoice {
    Fixed {
        c_used: f64,
    },
    /// Fit `(c, C)` on the base-field densities at the run's grid and time.
    Calibrated,
}

/// A full stability experiment: base field, perturbation family, `ε` and sweep.
#[derive(Clone, Debug)]
pub struct StabilityRun {
    pub base: CoefficientField,
    pub family: PerturbationFamily,
    pub epsilon: f64,
    pub q: QIndex,
    pub sweep: Vec<f64>,
    pub t: f64,
    pub from: PhasePoint,
    pub grid: GridSpec,
    pub config: MethodConfig,
    pub sampling: NormSampling,
    pub proxy: ProxyChoice,
    pub threshold: f64,
}

impl StabilityRun {
    pub fn validate(&self) -> Result<()> {
        let d = self.base.dim();
        self.family.validate(d)?;
        self.q.validate_for_dim(d)?;
        self.grid.validate(d)?;
        self.config.validate()?;
        self.sampling.validate()?;
        self.base.check_dim(&self.from)?;
        if !(self.t > 0.0 && self.t.is_finite()) {
            return Err(Error::invalid("t", "must be positive and finite"));
        }
        for e in std::iter::once(&self.epsilon).chain(&self.sweep) {
            if !(*e > 0.0 && e.is_finite()) {
                return Err(Error::invalid(
                    "epsilon",
                    format!("must be positive and finite, got {e}"),
                ));
            }
        }
        if let ProxyChoice::Fixed { c_used } = self.proxy {
            if !(c_used > 0.0 && c_used.is_finite()) {
                return Err(Error::invalid("c_used", "must be positive and finite"));
            }
        }
        if !(self.threshold >= 0.0) {
            return Err(Error::invalid("threshold", "must be nonnegative"));
        }
        Ok(())
    }

    fn pair(&self, epsilon: f64) -> Result<PerturbationPair> {
        PerturbationPair::new(
            self.base.clone(),
            self.family.apply(&self.base, epsilon)?,
            epsilon,
            self.q,
        )
    }
}

/// Runs `run` at `ε` and over the sweep; sweep points reuse the main run when
/// `ε` appears in the sweep.
pub fn run_stability(run: &StabilityRun) -> Result<StabilityReport> {
    run.validate()?;
    let evaluate = |eps: f64| -> Result<(PerturbationNorms, Vec<DifferenceGrid>)> {
        let pair = run.pair(eps)?;
        let norms = perturbation_norms(&pair, &run.sampling)?;
        let diffs = density_difference(&pair, run.t, &run.from, &run.grid, &run.config)?;
        Ok((norms, diffs))
    };
    let (norms, diffs) = evaluate(run.epsilon)?;

    let calibration = match run.proxy {
        ProxyChoice::Fixed { .. } => None,
        ProxyChoice::Calibrated => {
            let points = run.grid.points(run.base.dim())?;
            let samples: Vec<DensitySample> = points
                .into_iter()
                .zip(&diffs[0].base)
                .map(|(to, v)| DensitySample {
                    t: run.t,
                    from: run.from.clone(),
                    to,
                    value: *v,
                })
                .collect();
            Some(fit_proxy_constants(&samples, run.threshold)?)
        }
    };
    let c_used = match (&run.proxy, &calibration) {
        (ProxyChoice::Fixed { c_used }, _) => *c_used,
        (_, Some(c)) => c.c_used,
        _ => unreachable!(),
    };

    let ratio_at = |norms: PerturbationNorms, diffs: Vec<DifferenceGrid>| {
        stability_ratio(RatioInputs {
            t: run.t,
            from: run.from.clone(),
            grid: run.grid.clone(),
            norms,
            differences: diffs,
            c_used,
            threshold: run.threshold,
            config: run.config.clone(),
        })
    };
    let mut report = ratio_at(norms.clone(), diffs.clone())?;

    let mut sweep = Vec::new();
    for &eps in &run.sweep {
        let r = if eps == run.epsilon {
            report.clone()
        } else {
            let (n, d) = evaluate(eps)?;
            ratio_at(n, d)?
        };
        for m in &r.results {
            sweep.push(SweepPoint {
                epsilon: eps,
                method: m.method,
                delta_total: r.norms.delta_total,
                sup_diff: m.sup_diff,
                c_empirical: m.c_empirical,
            });
        }
    }
    report.sweep_summary = run
        .config
        .method
        .components()
        .iter()
        .map(|&m| {
            let pts: Vec<&SweepPoint> = sweep.iter().filter(|p| p.method == m).collect();
            let xs: Vec<f64> = pts.iter().map(|p| p.epsilon).collect();
            let ys: Vec<f64> = pts.iter().map(|p| p.sup_diff).collect();
            let cs: Vec<f64> = pts.iter().map(|p| p.c_empirical).collect();
            let spread = (!cs.is_empty()).then(|| {
                let max = cs.iter().copied().fold(f64::MIN, f64::max);
                let min = cs.iter().copied().fold(f64::MAX, f64::min);
                max / min - 1.0
            });
            SweepSummary {
                method: m,
                slope: log_log_slope(&xs, &ys),
                spread,
            }
        })
        .collect();
    report.epsilon_sweep = sweep;
    report.family = Some(run.family.clone());
    report.epsilon = Some(run.epsilon);
    report.sampling = Some(run.sampling.clone());
    report.calibration = calibration;
    Ok(report)
}

impl StabilityReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Long-format grid table:
    /// `method,x,y,base,perturbed,diff,band,proxy,ratio` (`ratio` empty below
    /// the threshold). `x`, `y` are the first coordinates of each node.
    pub fn to_csv(&self) -> Result<String> {
        let points = self.grid.points(self.from.dim())?;
        let mut out = String::from("method,x,y,base,perturbed,diff,band,proxy,ratio\n");
        for r in &self.results {
            for (k, p) in points.iter().enumerate() {
                let ratio = r.ratio[k].map(|v| v.to_string()).unwrap_or_default();
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{},{},{}",
                    r.method.name(),
                    p.x()[0],
                    p.y()[0],
                    r.base[k],
                    r.perturbed[k],
                    r.diff[k],
                    r.band[k],
                    r.proxy[k],
                    ratio
                );
            }
        }
        Ok(out)
    }

    /// `method,epsilon,delta_total,sup_diff,c_empirical`.
    pub fn sweep_csv(&self) -> String {
        let mut out = String::from("method,epsilon,delta_total,sup_diff,c_empirical\n");
        for s in &self.epsilon_sweep {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                s.method.name(),
                s.epsilon,
                s.delta_total,
                s.sup_diff,
                s.c_empirical
            );
        }
        out
    }
}

#[cfg(test)]
mod tests;
