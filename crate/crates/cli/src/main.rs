//! `pglab`: runs policy-gradient experiments described by JSON configs.
//!
//! Exit status is 0 on success, 2 when a configured check fails and 1 on
//! any error.

mod config;
mod experiments;
mod runner;
mod sweep;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use config::{Experiment, RunConfig};

#[derive(Parser)]
#[command(name = "pglab", version, about = "Finite-horizon policy-gradient experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Overrides {
    /// Replace the config's seed list with this single seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Write artifacts here instead of the config's output_dir.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment named in the config once per seed.
    Run {
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Repeat the base experiment along the config's sweep axis.
    Sweep {
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
}

fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var("PGLAB_THREADS") else { return Ok(()) };
    let n: usize =
        raw.trim().parse().with_context(|| format!("PGLAB_THREADS must be a positive integer, got {raw:?}"))?;
    anyhow::ensure!(n > 0, "PGLAB_THREADS must be positive");
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}

fn load(path: &Path, overrides: Overrides) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(path)?;
    if let Some(seed) = overrides.seed {
        cfg.seeds = vec![seed];
    }
    if let Some(out) = overrides.out {
        cfg.output_dir = out;
    }
    cfg.validate().with_context(|| format!("invalid config {}", path.display()))?;
    Ok(cfg)
}

fn verdict(pass: Option<bool>) -> ExitCode {
    if pass == Some(false) {
        ExitCode::from(2)
    } else {
        ExitCode::SUCCESS
    }
}

fn run_sweep(cfg: RunConfig) -> Result<ExitCode> {
    let spec = cfg.env.is_some().then(|| cfg.load_env()).transpose()?;
    let report = sweep::run_sweep(&cfg, spec)?;
    for p in &report.points {
        println!(
            "{} = {}: {} = {} ± {:.2e} (n = {})",
            format_axis(&cfg),
            p.value,
            report.metric,
            p.metric.mean,
            p.metric.stderr,
            p.metric.n
        );
    }
    if let Some(e) = report.fitted_exponent {
        println!("fitted exponent: {e:.3}");
    }
    println!("wrote {}", cfg.output_dir.join("sweep.csv").display());
    Ok(verdict(report.pass))
}

fn format_axis(cfg: &RunConfig) -> String {
    cfg.sweep
        .as_ref()
        .and_then(|s| serde_json::to_value(s.axis).ok())
        .and_then(|v| v.as_str().map(str::to_owned))
        .unwrap_or_default()
}

fn main_inner(cli: Cli) -> Result<ExitCode> {
    configure_threads()?;
    match cli.command {
        Command::Run { config, overrides } => {
            let cfg = load(&config, overrides)?;
            if cfg.experiment == Experiment::Sweep {
                return run_sweep(cfg);
            }
            let spec = if cfg.experiment.needs_env() { Some(cfg.load_env()?) } else { None };
            let report = runner::execute(&cfg, spec)?;
            for (k, a) in &report.summary {
                println!("{k}: {} ± {:.2e} (n = {})", a.mean, a.stderr, a.n);
            }
            match report.pass {
                Some(true) => println!("check: PASS"),
                Some(false) => println!("check: FAIL"),
                None => {}
            }
            println!("wrote {}", cfg.output_dir.join("report.json").display());
            Ok(verdict(report.pass))
        }
        Command::Sweep { config, overrides } => {
            let mut cfg = load(&config, overrides)?;
            anyhow::ensure!(cfg.sweep.is_some(), "config {} has no sweep section", config.display());
            cfg.experiment = Experiment::Sweep;
            run_sweep(cfg)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match main_inner(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
