use serde::{Deserialize, Serialize};

use super::difference::{mc_density_field, series_density_field, shared_references, Method, MethodConfig};
use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::model::{CoefficientField, PhasePoint};
use crate::parametrix::{lemma1_bound, parametrix_series_batch, EnvelopeConstants};
use crate::proxy::proxy_density_raw;

/// Candidate proxy constants, tried from the largest down.
pub const C_LADDER: [f64; 9] = [0.9, 0.8, 0.7, 0.6, 0.5, 0.4, 0.3, 0.2, 0.1];

/// Multiplicative constants `10^{k/10}`, `k = 0..=40`.
pub fn big_c_ladder() -> Vec<f64> {
    (0..=40).map(|k| 10f64.powf(k as f64 / 10.0)).collect()
}

/// Grid used at each time of a calibration battery.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum BatteryGrid {
    Fixed {
        grid: GridSpec,
    },
    /// [`GridSpec::around_mean`] at each time.
    AroundMean {
        k: f64,
        points: usize,
    },
}

impl BatteryGrid {
    pub fn at(&self, from: &PhasePoint, t: f64) -> GridSpec {
        match self {
            BatteryGrid::Fixed { grid } => grid.clone(),
            BatteryGrid::AroundMean { k, points } => GridSpec::around_mean(from, t, *k, *points),
        }
    }
}

/// One density value used for calibration.
#[derive(Clone, Debug, PartialEq)]
pub struct DensitySample {
    pub t: f64,
    pub from: PhasePoint,
    pub to: PhasePoint,
    pub value: f64,
}

/// Smallest admissible `C` for one candidate `c`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LadderEntry {
    pub c: f64,
    /// `max p / p̂_c` over the battery.
    pub required: f64,
    pub big_c: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProxyCalibration {
    pub c: f64,
    pub big_c: f64,
    /// Proxy constant used in stability ratios: `c / 2`.
    pub c_used: f64,
    pub ladder: Vec<LadderEntry>,
}

/// Largest `c` on [`C_LADDER`] and smallest `C` on [`big_c_ladder`] with
/// `p ≤ C·p̂_c` at every sample whose proxy value is at least `threshold`.
pub fn fit_proxy_constants(samples: &[DensitySample], threshold: f64) -> Result<ProxyCalibration> {
    if samples.is_empty() {
        return Err(Error::Calibration("empty battery".into()));
    }
    let ladder = big_c_ladder();
    let mut entries = Vec::with_capacity(C_LADDER.len());
    for &c in &C_LADDER {
        let mut required = 0.0f64;
        let mut used = 0usize;
        for s in samples {
            let proxy = proxy_density_raw(c, s.t, s.from.x(), s.from.y(), s.to.x(), s.to.y());
            if proxy >= threshold {
                required = required.max(s.value / proxy);
                used += 1;
            }
        }
        if used == 0 {
            return Err(Error::Calibration(
                "no battery point has a proxy value above the threshold; shrink the grid".into(),
            ));
        }
        let big_c = ladder.iter().copied().find(|v| *v >= required);
        entries.push(LadderEntry { c, required, big_c });
    }
    match entries.iter().find(|e| e.big_c.is_some()) {
        Some(e) => Ok(ProxyCalibration {
            c: e.c,
            big_c: e.big_c.unwrap_or_default(),
            c_used: 0.5 * e.c,
            ladder: entries,
        }),
        None => Err(Error::Calibration(
            "no (c, C) pair on the ladders dominates the density; shrink the grid toward the bulk".into(),
        )),
    }
}

fn check_times(t_list: &[f64]) -> Result<()> {
    if t_list.is_empty() {
        return Err(Error::invalid("t_list", "must not be empty"));
    }
    if t_list.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
        return Err(Error::invalid("t_list", "times must be positive and finite"));
    }
    Ok(())
}

/// Densities of `field` on the battery, computed with the first method of
/// `config`, then fitted with [`fit_proxy_constants`].
pub fn calibrate_proxy_constants(
    field: &CoefficientField,
    from: &PhasePoint,
    t_list: &[f64],
    grid: &BatteryGrid,
    config: &MethodConfig,
    threshold: f64,
) -> Result<ProxyCalibration> {
    check_times(t_list)?;
    config.validate()?;
    field.check_dim(from)?;
    let d = field.dim();
    let mut samples = Vec::new();
    for &t in t_list {
        let points = grid.at(from, t).points(d)?;
        let density = match config.method.components()[0] {
            Method::Series => {
                let refs = shared_references(field, &config.scheme, &points)?;
                series_density_field(field, t, from, &points, config.order, &config.scheme, refs)?
            }
            _ => mc_density_field(field, t, from, &points, &config.monte_carlo, None)?,
        };
        samples.extend(
            density
                .points
                .into_iter()
                .zip(density.values)
                .map(|(to, value)| DensitySample {
                    t,
                    from: from.clone(),
                    to,
                    value,
                }),
        );
    }
    fit_proxy_constants(&samples, threshold)
}

/// Envelope fit for the series terms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeCalibration {
    pub envelope: EnvelopeConstants,
    /// `max (|term_r| / (G_r p̂_c))^{1/(r+1)}` per rank, where `G_r` is the
    /// envelope with unit constant.
    pub required: Vec<f64>,
}

/// Smallest `C` on [`big_c_ladder`] with `|term_r| ≤ C^{r+1} G_r(t) p̂_c` for
/// every rank up to `order` on the battery, at fixed `c`.
pub fn calibrate_envelope(
    field: &CoefficientField,
    from: &PhasePoint,
    t_list: &[f64],
    grid: &BatteryGrid,
    order: usize,
    config: &MethodConfig,
    c: f64,
) -> Result<EnvelopeCalibration> {
    check_times(t_list)?;
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::invalid("c", "must be positive and finite"));
    }
    let gamma = field.constants().gamma;
    let d = field.dim();
    let mut required = vec![0.0f64; order + 1];
    for &t in t_list {
        let points = grid.at(from, t).points(d)?;
        let results = parametrix_series_batch(field, t, from, &points, order, &config.scheme)?;
        for (to, res) in points.iter().zip(&results) {
            let proxy = proxy_density_raw(c, t, from.x(), from.y(), to.x(), to.y());
            for (r, term) in res.terms.iter().enumerate() {
                let unit = lemma1_bound(r, t, gamma, 1.0)? * proxy;
                if unit > 0.0 && unit.is_finite() {
                    required[r] = required[r].max((term.abs() / unit).powf(1.0 / (r as f64 + 1.0)));
                }
            }
        }
    }
    let need = required.iter().fold(1.0f64, |m, v| m.max(*v));
    let big_c = big_c_ladder()
        .into_iter()
        .find(|v| *v >= need)
        .ok_or_else(|| Error::Calibration(format!("envelope constant {need} exceeds the ladder")))?;
    Ok(EnvelopeCalibration {
        envelope: EnvelopeConstants { c, big_c },
        required,
    })
}
