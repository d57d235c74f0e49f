use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::model::{FieldSpec, NormSampling, PerturbationFamily, PhasePoint, QIndex};
use crate::stability::{MethodConfig, ProxyChoice, DEFAULT_SWEEP, DEFAULT_THRESHOLD};

/// Largest series rank accepted from a config.
pub const MAX_ORDER: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    ProxyEval,
    Series,
    Simulate,
    Stability,
    Report,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::ProxyEval => "proxy-eval",
            Command::Series => "series",
            Command::Simulate => "simulate",
            Command::Stability => "stability",
            Command::Report => "report",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProxySection {
    pub c: f64,
}

fn default_sweep() -> Vec<f64> {
    DEFAULT_SWEEP.to_vec()
}

fn default_threshold() -> f64 {
    DEFAULT_THRESHOLD
}

fn default_proxy_choice() -> ProxyChoice {
    ProxyChoice::Calibrated
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StabilitySection {
    pub epsilon: f64,
    /// Defaults to the family's natural index.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<QIndex>,
    #[serde(default = "default_sweep")]
    pub sweep: Vec<f64>,
    #[serde(default = "default_proxy_choice")]
    pub proxy: ProxyChoice,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default)]
    pub sampling: NormSampling,
}

fn default_assumption_samples() -> usize {
    20_000
}

fn default_box_radius() -> f64 {
    4.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportSection {
    /// Calibration times; the run's `t` when empty.
    #[serde(default)]
    pub times: Vec<f64>,
    #[serde(default = "default_assumption_samples")]
    pub assumption_samples: usize,
    #[serde(default = "default_box_radius")]
    pub box_radius: f64,
}

impl Default for ReportSection {
    fn default() -> Self {
        ReportSection {
            times: Vec::new(),
            assumption_samples: default_assumption_samples(),
            box_radius: default_box_radius(),
        }
    }
}

/// One experiment, read from a TOML document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub command: Command,
    /// Drives every random stream of the run.
    pub seed: u64,
    pub t: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    pub from: PhasePoint,
    pub field: FieldSpec,
    pub grid: GridSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub proxy: Option<ProxySection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub method: Option<MethodConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perturbation: Option<PerturbationFamily>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stability: Option<StabilitySection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<ReportSection>,
}

/// Rewrites a validation error as a config error rooted at `section`.
fn at(section: &str, r: Result<()>) -> Result<()> {
    r.map_err(|e| match e {
        Error::InvalidArgument { name, reason } => Error::config(format!("{section}.{name}"), reason),
        Error::Config { .. } => e,
        other => Error::config(section, other.to_string()),
    })
}

fn positive(field: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::config(field, format!("must be positive and finite, got {v}")))
    }
}

fn require<'a, T>(field: &str, v: &'a Option<T>, command: Command) -> Result<&'a T> {
    v.as_ref()
        .ok_or_else(|| Error::config(field, format!("section is required by `{}`", command.name())))
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Toml(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let config = Self::from_toml(&text)?;
        config.validate()?;
        Ok(config)
    }

    /// The config with the top-level seed copied into every nested seed.
    pub fn normalized(&self) -> ExperimentConfig {
        let mut c = self.clone();
        if let Some(m) = &mut c.method {
            m.scheme.seed = c.seed;
            m.monte_carlo.seed = c.seed;
        }
        if let Some(s) = &mut c.stability {
            s.sampling.seed = c.seed;
        }
        c
    }

    /// Canonical TOML of [`Self::normalized`]: every default spelled out,
    /// fixed key order.
    pub fn to_canonical_toml(&self) -> Result<String> {
        toml::to_string(&self.normalized()).map_err(|e| Error::Toml(e.to_string()))
    }

    pub fn method_config(&self) -> MethodConfig {
        self.normalized().method.unwrap_or_else(|| {
            let mut m = MethodConfig::default();
            m.scheme.seed = self.seed;
            m.monte_carlo.seed = self.seed;
            m
        })
    }

    pub fn report_section(&self) -> ReportSection {
        self.report.clone().unwrap_or_default()
    }

    /// Checks every precondition reachable from the config; no computation.
    pub fn validate(&self) -> Result<()> {
        positive("t", self.t)?;
        at("field", self.field.validate())?;
        let d = self.field.dim;
        if self.from.dim() != d {
            return Err(Error::config(
                "from",
                format!("dimension {} does not match field.dim = {d}", self.from.dim()),
            ));
        }
        if self.from.stacked().iter().any(|v| !v.is_finite()) {
            return Err(Error::config("from", "coordinates must be finite"));
        }
        at("grid", self.grid.validate(d))?;
        if let Some(m) = &self.method {
            at("method", m.validate())?;
            if m.order > MAX_ORDER {
                return Err(Error::config(
                    "method.order",
                    format!("must not exceed {MAX_ORDER}, got {}", m.order),
                ));
            }
        }
        match self.command {
            Command::ProxyEval => {
                let p = require("proxy", &self.proxy, self.command)?;
                positive("proxy.c", p.c)?;
            }
            Command::Series | Command::Simulate => {}
            Command::Stability => {
                let family = require("perturbation", &self.perturbation, self.command)?;
                let s = require("stability", &self.stability, self.command)?;
                at("perturbation", family.validate(d))?;
                positive("stability.epsilon", s.epsilon)?;
                for (k, e) in s.sweep.iter().enumerate() {
                    positive(&format!("stability.sweep[{k}]"), *e)?;
                }
                let q = s.q.unwrap_or_else(|| family.natural_q(d));
                at("stability", q.validate_for_dim(d))?;
                if !(s.threshold >= 0.0 && s.threshold.is_finite()) {
                    return Err(Error::config("stability.threshold", "must be finite and nonnegative"));
                }
                if let ProxyChoice::Fixed { c_used } = s.proxy {
                    positive("stability.proxy.c_used", c_used)?;
                }
                at("stability.sampling", s.sampling.validate())?;
                let base = at_build(&self.field)?;
                let largest = s.sweep.iter().copied().fold(s.epsilon, f64::max);
                at("perturbation", family.apply(&base, largest).map(|_| ()))?;
            }
            Command::Report => {
                let r = self.report_section();
                for (k, t) in r.times.iter().enumerate() {
                    positive(&format!("report.times[{k}]"), *t)?;
                }
                if r.assumption_samples == 0 {
                    return Err(Error::config("report.assumption_samples", "must be at least 1"));
                }
                positive("report.box_radius", r.box_radius)?;
            }
        }
        Ok(())
    }
}

fn at_build(spec: &FieldSpec) -> Result<crate::model::CoefficientField> {
    spec.build().map_err(|e| match e {
        Error::InvalidArgument { name, reason } => Error::config(format!("field.{name}"), reason),
        other => Error::config("field", other.to_string()),
    })
}
