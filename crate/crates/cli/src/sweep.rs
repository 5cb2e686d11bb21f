//! Repeats a base experiment along one parameter axis and aggregates a
//! per-seed metric at every point into `sweep.csv`.

use anyhow::{Context as _, Result};
use pglab_core::report::{fmt_opt, write_csv, write_json};
use pglab_core::{EnvSpec, Error};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{Axis, RunConfig, SweepConfig};
use crate::runner::{execute, Aggregate};

pub const SWEEP_SCHEMA: &str = "pglab-sweep-v1";
pub const SWEEP_REPORT_SCHEMA: &str = "pglab-sweep-report-v1";

#[derive(Debug, Clone, Serialize)]
pub struct SweepPoint {
    pub value: usize,
    pub output_dir: std::path::PathBuf,
    pub metric: Aggregate,
    pub pass: Option<bool>,
}

#[derive(Debug, Serialize)]
pub struct SweepReport {
    pub schema: &'static str,
    pub config: RunConfig,
    pub metric: String,
    pub points: Vec<SweepPoint>,
    /// Least-squares slope of `log(mean metric)` against `log(axis value)`.
    pub fitted_exponent: Option<f64>,
    pub pass: Option<bool>,
}

/// Slope of the log-log least-squares line through the points with
/// positive coordinates. Needs at least two distinct axis values.
pub fn log_log_slope(points: &[(f64, f64)]) -> Option<f64> {
    let logs: Vec<(f64, f64)> =
        points.iter().filter(|(x, y)| *x > 0.0 && *y > 0.0).map(|(x, y)| (x.ln(), y.ln())).collect();
    let n = logs.len() as f64;
    if logs.len() < 2 {
        return None;
    }
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = logs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

fn point_config(base: &RunConfig, sweep: &SweepConfig, index: usize, value: usize) -> RunConfig {
    let mut cfg = base.clone();
    cfg.experiment = sweep.experiment;
    cfg.sweep = None;
    cfg.output_dir = base.output_dir.join(format!("point-{index}"));
    match sweep.axis {
        Axis::Batch => cfg.optimizer.batch = value,
        Axis::Iters => cfg.optimizer.iters = value,
        Axis::Horizon => {}
    }
    cfg
}

pub fn run_sweep(cfg: &RunConfig, spec: Option<EnvSpec>) -> Result<SweepReport> {
    let sweep = cfg.sweep.as_ref().context("config has no sweep section")?;
    if sweep.values.is_empty() {
        return Err(Error::InvalidArgument("sweep axis has no values".into()).into());
    }
    if sweep.axis == Axis::Horizon && spec.is_none() {
        return Err(Error::InvalidArgument("a horizon sweep needs an env file".into()).into());
    }
    let metric = sweep.metric().to_owned();
    let points = sweep
        .values
        .par_iter()
        .enumerate()
        .map(|(i, &value)| {
            let pc = point_config(cfg, sweep, i, value);
            let point_spec = match (&spec, sweep.axis) {
                (Some(s), Axis::Horizon) => Some(s.with_horizon(value)?),
                (s, _) => s.clone(),
            };
            let report = execute(&pc, point_spec).with_context(|| format!("sweep point {value}"))?;
            let agg = Aggregate::of(report.metric(&metric));
            Ok(SweepPoint { value, output_dir: pc.output_dir, metric: agg, pass: report.pass })
        })
        .collect::<Result<Vec<_>>>()?;

    let fitted_exponent = log_log_slope(
        &points.iter().filter(|p| p.metric.n > 0).map(|p| (p.value as f64, p.metric.mean)).collect::<Vec<_>>(),
    );
    let verdicts: Vec<bool> = points.iter().filter_map(|p| p.pass).collect();
    let pass = (!verdicts.is_empty()).then(|| verdicts.iter().all(|&p| p));

    let axis = serde_json::to_value(sweep.axis)?;
    let axis = axis.as_str().unwrap_or("value");
    let rows: Vec<Vec<String>> = points
        .iter()
        .map(|p| {
            let has = p.metric.n > 0;
            vec![
                p.value.to_string(),
                p.metric.n.to_string(),
                fmt_opt(has.then_some(p.metric.mean)),
                fmt_opt(has.then_some(p.metric.stderr)),
                p.pass.map_or_else(String::new, |b| b.to_string()),
            ]
        })
        .collect();
    let mut csv = Vec::new();
    let mean_col = format!("{metric}_mean");
    let se_col = format!("{metric}_stderr");
    write_csv(&mut csv, SWEEP_SCHEMA, &[axis, "n", &mean_col, &se_col, "pass"], &rows)?;
    std::fs::create_dir_all(&cfg.output_dir)
        .with_context(|| format!("cannot create output dir {}", cfg.output_dir.display()))?;
    crate::runner::write_file(&cfg.output_dir.join("sweep.csv"), &csv)?;

    let report =
        SweepReport { schema: SWEEP_REPORT_SCHEMA, config: cfg.clone(), metric, points, fitted_exponent, pass };
    write_json(&cfg.output_dir.join("report.json"), &report)?;
    Ok(report)
}
