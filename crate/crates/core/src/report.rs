//! CSV and JSON artifacts. Every CSV starts with a `#schema=` comment line
//! naming the column layout and its version.

use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::error::Result;
use crate::landscape::KlScanReport;
use crate::optim::ConvergenceReport;

pub const TRACE_SCHEMA: &str = "pglab-trace-v1";
pub const KL_SCAN_SCHEMA: &str = "pglab-kl-scan-v1";

/// Writes a schema line, a header and comma-separated rows.
pub fn write_csv<W: Write>(mut w: W, schema: &str, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    writeln!(w, "#schema={schema}")?;
    writeln!(w, "{}", header.join(","))?;
    for row in rows {
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

/// Shortest round-trip formatting; empty for missing values.
pub fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(String::new, |v| v.to_string())
}

/// One row per iteration: `iter, objective, gap, pg_norm`. Objective and
/// gap are empty at iterations where the objective was not evaluated.
pub fn trace_rows(report: &ConvergenceReport) -> Vec<Vec<String>> {
    let mut objective = vec![None; report.iterations + 1];
    for (&k, &v) in report.objective_iters.iter().zip(&report.objective_trace) {
        if k < objective.len() {
            objective[k] = Some(v);
        }
    }
    (0..=report.iterations)
        .filter(|&k| objective[k].is_some() || k < report.pg_norm_trace.len())
        .map(|k| {
            let gap = objective[k].zip(report.reference_opt).map(|(v, o)| v - o);
            vec![k.to_string(), fmt_opt(objective[k]), fmt_opt(gap), fmt_opt(report.pg_norm_trace.get(k).copied())]
        })
        .collect()
}

pub fn write_trace_csv<W: Write>(w: W, report: &ConvergenceReport) -> Result<()> {
    write_csv(w, TRACE_SCHEMA, &["iter", "objective", "gap", "pg_norm"], &trace_rows(report))
}

pub fn write_kl_scan_csv<W: Write>(w: W, report: &KlScanReport) -> Result<()> {
    let rows: Vec<Vec<String>> = report
        .samples
        .iter()
        .map(|s| {
            vec![
                s.id.to_string(),
                s.suboptimality.to_string(),
                s.pg_norm_sq.to_string(),
                s.pg_norm_sq_upper.to_string(),
                fmt_opt(s.ratio),
            ]
        })
        .collect();
    write_csv(w, KL_SCAN_SCHEMA, &["id", "suboptimality", "pg_norm_sq", "pg_norm_sq_upper", "ratio"], &rows)
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}
