//! Runs every seed of a config in parallel, then writes the artifacts.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{Context as _, Result};
use pglab_core::report::write_json;
use pglab_core::stats::Moments;
use pglab_core::EnvSpec;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::RunConfig;
use crate::experiments::{run_seed, Context, SeedOutcome};

pub const REPORT_SCHEMA: &str = "pglab-report-v1";

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Aggregate {
    pub n: u64,
    pub mean: f64,
    pub stderr: f64,
}

impl Aggregate {
    pub fn of(values: impl IntoIterator<Item = f64>) -> Aggregate {
        let mut m = Moments::default();
        values.into_iter().for_each(|v| m.push(v));
        Aggregate { n: m.n, mean: m.mean, stderr: m.stderr() }
    }
}

#[derive(Debug, Serialize)]
pub struct RunReport {
    pub schema: &'static str,
    pub config: RunConfig,
    pub env: Option<EnvSpec>,
    pub smoothness: Option<f64>,
    pub reference_opt: Option<f64>,
    pub warnings: Vec<String>,
    pub runs: Vec<SeedOutcome>,
    /// Mean and standard error of every metric across seeds.
    pub summary: BTreeMap<String, Aggregate>,
    /// `None` when no seed has a pass/fail criterion.
    pub pass: Option<bool>,
    pub elapsed_secs: f64,
}

impl RunReport {
    pub fn metric<'a>(&'a self, name: &'a str) -> impl Iterator<Item = f64> + 'a {
        self.runs.iter().filter_map(move |r| r.metrics.get(name).copied())
    }
}

/// Runs `cfg` against an already loaded environment and writes
/// `report.json` plus `seed-<s>/trace.csv` under the output directory.
pub fn execute(cfg: &RunConfig, spec: Option<EnvSpec>) -> Result<RunReport> {
    let start = std::time::Instant::now();
    let ctx = Context::prepare(cfg, spec)?;
    let runs = cfg
        .seeds
        .par_iter()
        .map(|&seed| run_seed(cfg, &ctx, seed).with_context(|| format!("seed {seed}")))
        .collect::<Result<Vec<_>>>()?;

    let mut keys: Vec<&String> = runs.iter().flat_map(|r| r.metrics.keys()).collect();
    keys.sort();
    keys.dedup();
    let summary = keys
        .into_iter()
        .map(|k| (k.clone(), Aggregate::of(runs.iter().filter_map(|r| r.metrics.get(k).copied()))))
        .collect();
    let verdicts: Vec<bool> = runs.iter().filter_map(|r| r.pass).collect();
    let pass = (!verdicts.is_empty()).then(|| verdicts.iter().all(|&p| p));

    let out = &cfg.output_dir;
    std::fs::create_dir_all(out).with_context(|| format!("cannot create output dir {}", out.display()))?;
    for r in &runs {
        let dir = out.join(format!("seed-{}", r.seed));
        std::fs::create_dir_all(&dir).with_context(|| format!("cannot create {}", dir.display()))?;
        write_file(&dir.join("trace.csv"), &r.trace)?;
    }
    let report = RunReport {
        schema: REPORT_SCHEMA,
        config: cfg.clone(),
        env: ctx.spec,
        smoothness: ctx.smoothness,
        reference_opt: ctx.optimum.as_ref().map(|o| o.value),
        warnings: ctx.optimum.map(|o| o.warnings).unwrap_or_default(),
        runs,
        summary,
        pass,
        elapsed_secs: start.elapsed().as_secs_f64(),
    };
    write_json(&out.join("report.json"), &report)
        .with_context(|| format!("cannot write report in {}", out.display()))?;
    Ok(report)
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).with_context(|| format!("cannot write {}", path.display()))
}
