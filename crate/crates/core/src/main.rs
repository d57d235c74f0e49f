use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use kolmo::cli::{run_experiment, ExperimentConfig};
use kolmo::Error;

/// Parametrix densities and stability experiments for degenerate Kolmogorov diffusions.
#[derive(Debug, Parser)]
#[command(name = "kolmo", version)]
struct Args {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output_dir` in the config.
    #[arg(long, env = "KOLMO_OUT_DIR")]
    out: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker thread cap; results do not depend on it.
    #[arg(long)]
    threads: Option<usize>,
}

fn run(args: Args) -> Result<(), Error> {
    let text = std::fs::read_to_string(&args.config)?;
    let mut config = ExperimentConfig::from_toml(&text)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    config.validate()?;
    let out = args
        .out
        .or_else(|| config.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("kolmo-out"));
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = args.threads {
        if n == 0 {
            return Err(Error::config("--threads", "must be at least 1"));
        }
        pool = pool.num_threads(n);
    }
    let pool = pool.build().map_err(|e| Error::config("--threads", e.to_string()))?;
    let manifest = pool.install(|| run_experiment(&config, &out))?;
    for a in &manifest.artifacts {
        println!("{}  {}", a.sha256, out.join(&a.file).display());
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Args::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ (Error::Config { .. } | Error::Toml(_))) => {
            eprintln!("invalid config: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
