//! Experiment runner: a TOML config in, CSV/JSON artifacts and a manifest out.

mod config;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use config::{Command, ExperimentConfig, ProxySection, ReportSection, StabilitySection, MAX_ORDER};

use crate::error::{Error, Result};
use crate::model::verify_assumptions;
use crate::parametrix::parametrix_series_batch;
use crate::proxy::{kolmogorov_proxy_density, ProxyParams};
use crate::simulate::mc_density_with;
use crate::stability::{calibrate_proxy_constants, run_stability, BatteryGrid, StabilityRun, DEFAULT_THRESHOLD};

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const TIMING_FILE: &str = "timing.json";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactEntry {
    pub file: String,
    pub sha256: String,
    pub bytes: u64,
}

/// Reproducibility record of a run. Contains no timing or host data, so
/// identical configs yield identical manifests.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: u64,
    /// SHA-256 of the canonical config.
    pub config_sha256: String,
    pub artifacts: Vec<ArtifactEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub wall_seconds: f64,
    pub threads: usize,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

struct Writer {
    dir: PathBuf,
    entries: Vec<ArtifactEntry>,
}

impl Writer {
    fn put(&mut self, file: &str, content: &str) -> Result<()> {
        fs::write(self.dir.join(file), content)?;
        self.entries.push(ArtifactEntry {
            file: file.to_string(),
            sha256: sha256_hex(content.as_bytes()),
            bytes: content.len() as u64,
        });
        Ok(())
    }
}

fn json<T: Serialize>(v: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    Ok(s)
}

/// Validates `config`, runs its command and writes artifacts, the canonical
/// config, `manifest.json` and `timing.json` into `out_dir`.
pub fn run_experiment(config: &ExperimentConfig, out_dir: &Path) -> Result<Manifest> {
    config.validate()?;
    let canonical = config.to_canonical_toml()?;
    fs::create_dir_all(out_dir)?;
    let start = Instant::now();
    let mut w = Writer {
        dir: out_dir.to_path_buf(),
        entries: Vec::new(),
    };
    w.put("config.toml", &canonical)?;
    match config.command {
        Command::ProxyEval => proxy_eval(config, &mut w)?,
        Command::Series => series(config, &mut w)?,
        Command::Simulate => simulate(config, &mut w)?,
        Command::Stability => stability(config, &mut w)?,
        Command::Report => report(config, &mut w)?,
    }
    let manifest = Manifest {
        schema_version: MANIFEST_SCHEMA_VERSION,
        tool: env!("CARGO_PKG_NAME").to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        command: config.command.name().to_string(),
        seed: config.seed,
        config_sha256: sha256_hex(canonical.as_bytes()),
        artifacts: w.entries,
    };
    fs::write(out_dir.join(MANIFEST_FILE), json(&manifest)?)?;
    let timing = Timing {
        wall_seconds: start.elapsed().as_secs_f64(),
        threads: rayon::current_num_threads(),
    };
    fs::write(out_dir.join(TIMING_FILE), json(&timing)?)?;
    Ok(manifest)
}

fn proxy_eval(config: &ExperimentConfig, w: &mut Writer) -> Result<()> {
    let c = config.proxy.as_ref().map(|p| p.c).unwrap_or(1.0);
    let params = ProxyParams::new(c, config.field.dim)?;
    let mut out = String::from("t,x,y,value\n");
    for to in config.grid.points(config.field.dim)? {
        let v = kolmogorov_proxy_density(params, config.t, &config.from, &to)?;
        let _ = writeln!(out, "{},{},{},{}", config.t, to.x()[0], to.y()[0], v);
    }
    w.put("proxy.csv", &out)
}

fn series(config: &ExperimentConfig, w: &mut Writer) -> Result<()> {
    let field = config.field.build()?;
    let m = config.method_config();
    let points = config.grid.points(field.dim())?;
    let results = parametrix_series_batch(&field, config.t, &config.from, &points, m.order, &m.scheme)?;
    let mut values = String::from("t,x,y,value,error_estimate,tail_estimate\n");
    let mut terms = String::from("x,y,rank,term,bound\n");
    for (to, r) in points.iter().zip(&results) {
        let (x, y) = (to.x()[0], to.y()[0]);
        let _ = writeln!(
            values,
            "{},{},{},{},{},{}",
            config.t, x, y, r.value, r.error_estimate, r.tail_estimate
        );
        for (k, (term, bound)) in r.terms.iter().zip(&r.bound_terms).enumerate() {
            let _ = writeln!(terms, "{x},{y},{k},{term},{bound}");
        }
    }
    w.put("series.csv", &values)?;
    w.put("series_terms.csv", &terms)?;
    w.put("series.json", &json(&results)?)
}

fn simulate(config: &ExperimentConfig, w: &mut Writer) -> Result<()> {
    let field = config.field.build()?;
    let m = config.method_config();
    let grid = mc_density_with(&field, &config.from, config.t, &config.grid, &m.monte_carlo)?;
    w.put("density.csv", &grid.to_csv())?;
    w.put("density.json", &json(&grid)?)
}

fn stability(config: &ExperimentConfig, w: &mut Writer) -> Result<()> {
    let (family, s) = match (&config.perturbation, &config.stability) {
        (Some(f), Some(s)) => (f, s),
        _ => return Err(Error::config("stability", "section is required")),
    };
    let base = config.field.build()?;
    let mut sampling = s.sampling.clone();
    sampling.seed = config.seed;
    let run = StabilityRun {
        q: s.q.unwrap_or_else(|| family.natural_q(base.dim())),
        base,
        family: family.clone(),
        epsilon: s.epsilon,
        sweep: s.sweep.clone(),
        t: config.t,
        from: config.from.clone(),
        grid: config.grid.clone(),
        config: config.method_config(),
        sampling,
        proxy: s.proxy.clone(),
        threshold: s.threshold,
    };
    let report = run_stability(&run)?;
    w.put("stability.csv", &report.to_csv()?)?;
    w.put("sweep.csv", &report.sweep_csv())?;
    w.put("stability.json", &json(&report)?)
}

fn report(config: &ExperimentConfig, w: &mut Writer) -> Result<()> {
    let field = config.field.build()?;
    let r = config.report_section();
    let assumptions = verify_assumptions(&field, r.assumption_samples, r.box_radius, config.seed)?;
    w.put("assumptions.json", &json(&assumptions)?)?;
    let times = if r.times.is_empty() { vec![config.t] } else { r.times };
    let calibration = calibrate_proxy_constants(
        &field,
        &config.from,
        &times,
        &BatteryGrid::Fixed {
            grid: config.grid.clone(),
        },
        &config.method_config(),
        DEFAULT_THRESHOLD,
    )?;
    w.put("calibration.json", &json(&calibration)?)
}
