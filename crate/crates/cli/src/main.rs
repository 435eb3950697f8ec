//! `sim`: run experiments described by a single JSON config.
//!
//! Exit codes: 0 when every statistical verdict passes, 2 when one fails,
//! 1 on any execution or configuration error.

mod config;
mod experiment;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use config::{ConfigError, SCHEMA_VERSION};
use experiment::Command;
use output::{sha256_hex, OutputDir, RunManifest, Timings};

/// Worker-pool size; defaults to the number of cores.
const WORKERS_ENV: &str = "SIM_WORKERS";

#[derive(Parser)]
#[command(name = "sim", version, about = "Exact simulation and limit-theorem checks for mean-field particle systems")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Simulate replicas and export trajectories and the limit.
    Run(Common),
    /// Law-of-large-numbers convergence rate across population sizes.
    Lln(Common),
    /// Fluctuation covariance and normality at the horizon.
    Clt(Common),
    /// Validate the config, then check the model's kernels.
    Validate(Common),
}

#[derive(Args)]
struct Common {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Override `run.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Override `run.replicas`.
    #[arg(long)]
    replicas: Option<usize>,
    /// Output directory; defaults to `output.directory`.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn workers() -> Result<usize> {
    match std::env::var(WORKERS_ENV) {
        Ok(s) => {
            let n: usize = s.trim().parse().with_context(|| format!("{WORKERS_ENV}={s:?} is not a positive integer"))?;
            anyhow::ensure!(n > 0, "{WORKERS_ENV} must be >= 1");
            Ok(n)
        }
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

fn execute(cmd: Command, args: &Common) -> Result<i32> {
    let started = Instant::now();
    let mut v = match config::load(&args.config) {
        Ok(v) => v,
        Err(e @ ConfigError::Invalid(_)) => {
            eprintln!("{}: {e}", args.config.display());
            return Ok(1);
        }
        Err(e) => return Err(e.into()),
    };
    if let Some(s) = args.seed {
        v.run_mut().seed = s;
    }
    if let Some(r) = args.replicas {
        anyhow::ensure!(r > 0, "--replicas must be >= 1");
        v.run_mut().replicas = r;
    }
    let dir = args.out.clone().unwrap_or_else(|| PathBuf::from(&v.config.output.directory));
    let workers = workers()?;
    rayon::ThreadPoolBuilder::new().num_threads(workers).build_global()?;

    let mut out = OutputDir::create(&dir)?;
    let outcome = experiment::execute(cmd, &v, &mut out)?;
    let code = if outcome.passed { 0 } else { 2 };
    let manifest = RunManifest {
        artifact_version: env!("CARGO_PKG_VERSION"),
        schema_version: SCHEMA_VERSION,
        command: cmd.name().to_string(),
        config_sha256: sha256_hex(&v.raw),
        seed: v.run().seed,
        replicas: v.run().replicas,
        workers,
        replica_seeds: outcome.replica_seeds,
        files: out.inventory()?,
        timings: Timings {
            limit_seconds: outcome.limit_seconds,
            simulation_seconds: outcome.simulation_seconds,
            total_seconds: started.elapsed().as_secs_f64(),
        },
        exit_code: code,
    };
    let path = out.root().join("manifest.json");
    std::fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n")
        .with_context(|| format!("writing {}", path.display()))?;
    println!("{} [{}]", outcome.summary, if code == 0 { "pass" } else { "FAIL" });
    Ok(code)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (cmd, args) = match &cli.command {
        Sub::Run(a) => (Command::Run, a),
        Sub::Lln(a) => (Command::Lln, a),
        Sub::Clt(a) => (Command::Clt, a),
        Sub::Validate(a) => (Command::Validate, a),
    };
    match execute(cmd, args) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
