//! One experiment at one seed. Each run returns scalar metrics for the
//! report and the bytes of its `trace.csv`, which depend only on the
//! resolved config and the seed.

use std::collections::BTreeMap;

use anyhow::{bail, Context as _, Result};
use pglab_core::envs::Model;
use pglab_core::landscape::{
    appendix_hard_instance, appendix_ratio_target, crn_fd_check, fd_gradient_check, kl_scan, seq_decomp_spot_check,
    sequence_lemma_search, weak_lemma_instance, DecompReference, DecompStatus, KlScanOptions,
};
use pglab_core::mdp::{mc_cost, Simulator};
use pglab_core::objective::{AsExact, AsStochastic, Optimum, PolicyObjective};
use pglab_core::optim::{estimate_smoothness, pgd, psgd, sample_interior_params, sample_params, PgdOptions};
use pglab_core::report::{write_csv, write_kl_scan_csv, write_trace_csv};
use pglab_core::rng::{derive_seed, stream_rng};
use pglab_core::{ConvergenceReport, EnvSpec, PolicyParams};
use serde::Serialize;

use crate::config::{Experiment, RunConfig, Start};

pub const DP_ORACLE_SCHEMA: &str = "pglab-dp-oracle-v1";
pub const FD_CHECK_SCHEMA: &str = "pglab-fd-check-v1";
pub const SEQ_LEMMA_SCHEMA: &str = "pglab-seq-lemma-v1";
pub const SEQ_DECOMP_SCHEMA: &str = "pglab-seq-decomp-v1";

// Streams of the per-seed RNG.
const START_STREAM: u64 = 0x57a7;
const POINT_STREAM: u64 = 1;

/// Seed-independent state shared by every seed of a run.
pub struct Context {
    pub spec: Option<EnvSpec>,
    pub model: Option<Model>,
    pub optimum: Option<Optimum>,
    pub smoothness: Option<f64>,
    pub reference: Option<DecompReference>,
}

impl Context {
    pub fn prepare(cfg: &RunConfig, spec: Option<EnvSpec>) -> Result<Context> {
        let model = match &spec {
            Some(s) if cfg.experiment.needs_env() => Some(s.build()?),
            _ => None,
        };
        let mut ctx = Context { spec, model, optimum: None, smoothness: None, reference: None };
        let Some(model) = &ctx.model else { return Ok(ctx) };
        match cfg.experiment {
            Experiment::Pgd | Experiment::Psgd => {
                ctx.optimum = Some(PolicyObjective::optimum(model)?);
                let o = &cfg.optimizer;
                let l = match o.smoothness {
                    Some(l) => l,
                    None => {
                        let oracle = AsExact { objective: model, batch: o.smoothness_batch, seed: o.smoothness_seed };
                        estimate_smoothness(
                            &oracle,
                            &model.feasible_sets(),
                            &model.template(),
                            o.smoothness_pairs,
                            o.smoothness_seed,
                        )?
                    }
                };
                if !(l > 0.0 && l.is_finite()) {
                    bail!("estimated smoothness {l} is unusable; set optimizer.smoothness");
                }
                ctx.smoothness = Some(l);
            }
            Experiment::KlScan => ctx.optimum = Some(PolicyObjective::optimum(model)?),
            Experiment::DpOracle => {
                let grid = cfg.dp_oracle.grid;
                ctx.optimum = Some(match model {
                    Model::Inventory(e) => {
                        let s = e.dp_oracle(grid)?;
                        Optimum { theta: s.theta, value: s.value, warnings: s.warnings }
                    }
                    Model::CashBalance(e) => {
                        let s = e.dp_oracle(grid)?;
                        Optimum { theta: s.theta, value: s.value, warnings: s.warnings }
                    }
                    _ => PolicyObjective::optimum(model)?,
                });
            }
            Experiment::SeqDecomp => ctx.reference = Some(DecompReference::new(model, cfg.seq_decomp.grid)?),
            Experiment::FdCheck | Experiment::SeqLemma | Experiment::Sweep => {}
        }
        if let Some(opt) = &ctx.optimum {
            for w in &opt.warnings {
                log::warn!("{w}");
            }
        }
        Ok(ctx)
    }

    fn model(&self) -> Result<&Model> {
        self.model.as_ref().context("experiment needs an environment")
    }

    fn optimum(&self) -> Result<&Optimum> {
        self.optimum.as_ref().context("reference optimum was not prepared")
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SeedOutcome {
    pub seed: u64,
    /// `None` when the experiment has no pass/fail criterion configured.
    pub pass: Option<bool>,
    pub metrics: BTreeMap<String, f64>,
    #[serde(skip)]
    pub trace: Vec<u8>,
}

struct Metrics(BTreeMap<String, f64>);

impl Metrics {
    fn new() -> Self {
        Metrics(BTreeMap::new())
    }

    fn set(&mut self, key: &str, value: impl Into<Option<f64>>) {
        if let Some(v) = value.into() {
            self.0.insert(key.to_owned(), v);
        }
    }
}

pub fn run_seed(cfg: &RunConfig, ctx: &Context, seed: u64) -> Result<SeedOutcome> {
    let (pass, metrics, trace) = match cfg.experiment {
        Experiment::Pgd | Experiment::Psgd => run_optimizer(cfg, ctx, seed)?,
        Experiment::KlScan => run_kl_scan(cfg, ctx, seed)?,
        Experiment::FdCheck => run_fd_check(cfg, ctx, seed)?,
        Experiment::DpOracle => run_dp_oracle(cfg, ctx, seed)?,
        Experiment::SeqLemma => run_seq_lemma(cfg, seed)?,
        Experiment::SeqDecomp => run_seq_decomp(cfg, ctx, seed)?,
        Experiment::Sweep => bail!("sweeps run through the sweep driver"),
    };
    Ok(SeedOutcome { seed, pass, metrics: metrics.0, trace })
}

type Run = (Option<bool>, Metrics, Vec<u8>);

fn start_point(cfg: &RunConfig, model: &Model, seed: u64) -> PolicyParams {
    match cfg.optimizer.start {
        Start::Template => model.template(),
        Start::Random => sample_params(&model.feasible_sets(), &model.template(), &mut stream_rng(seed, START_STREAM)),
    }
}

const MAX_DOUBLINGS: usize = 10;

/// First iterate whose successor has a larger objective, beyond roundoff.
fn first_rise(objective: &[f64]) -> Option<usize> {
    objective.windows(2).position(|w| w[1] > w[0] + 1e-12 * (1.0 + w[0].abs()))
}

/// First recorded iteration whose gap is at most `target`.
fn iters_to_target(r: &ConvergenceReport, opt: f64, target: f64) -> Option<usize> {
    r.objective_iters.iter().zip(&r.objective_trace).find(|(_, &v)| v - opt <= target).map(|(&k, _)| k)
}

/// Mean gap over the trailing `fraction` of the recorded objective values.
fn plateau_gap(r: &ConvergenceReport, opt: f64, fraction: f64) -> Option<f64> {
    let n = r.objective_trace.len();
    let take = ((n as f64 * fraction).ceil() as usize).clamp(1, n.max(1));
    let tail = &r.objective_trace[n.checked_sub(take)?..];
    (!tail.is_empty()).then(|| tail.iter().map(|v| v - opt).sum::<f64>() / tail.len() as f64)
}

fn run_optimizer(cfg: &RunConfig, ctx: &Context, seed: u64) -> Result<Run> {
    let model = ctx.model()?;
    let opt = ctx.optimum()?.value;
    let o = &cfg.optimizer;
    let sets = model.feasible_sets();
    let x0 = start_point(cfg, model, seed);
    let l = ctx.smoothness.context("smoothness was not prepared")?;
    let opts = PgdOptions::new(o.iters, l).with_tolerance(o.tolerance).with_reference(opt);
    let mut doublings = 0;
    let report = if cfg.experiment == Experiment::Pgd {
        let oracle = AsExact { objective: model, batch: o.batch, seed };
        let mut opts = opts;
        loop {
            let r = pgd(&oracle, &sets, &x0, &opts)?;
            // With exact gradients and a valid L every step descends; a rise
            // means the sampled estimate missed curvature somewhere on the path.
            let rises = first_rise(&r.objective_trace);
            if !(model.exact_gradient() && o.smoothness.is_none() && o.smoothness_backoff) || rises.is_none() {
                break r;
            }
            if doublings == MAX_DOUBLINGS {
                log::warn!("seed {seed}: objective still rises with L = {}", opts.smoothness);
                break r;
            }
            log::warn!("seed {seed}: objective rose at iterate {:?}; doubling L = {}", rises, opts.smoothness);
            opts.smoothness *= 2.0;
            doublings += 1;
        }
    } else {
        let eval = |x: &PolicyParams| model.cost(x);
        psgd(&AsStochastic(model), &sets, &x0, &opts, o.batch, seed, Some(&eval), o.eval_every)?
    };
    let mut m = Metrics::new();
    m.set("smoothness", report.smoothness_l);
    if doublings > 0 {
        m.set("smoothness_doublings", doublings as f64);
    }
    m.set("iterations", report.iterations as f64);
    m.set("final_objective", report.final_objective());
    m.set("final_gap", report.final_gap());
    m.set("fitted_rate", report.fitted_rate);
    if cfg.experiment == Experiment::Psgd {
        m.set("plateau_gap", plateau_gap(&report, opt, o.plateau_fraction));
    }
    let mut pass = None;
    if let Some(target) = o.target_gap {
        let hit = iters_to_target(&report, opt, target);
        m.set("iters_to_target", hit.map(|k| k as f64));
        if cfg.experiment == Experiment::Psgd {
            m.set("samples_to_target", hit.map(|k| (k * o.batch) as f64));
        }
        pass = Some(report.final_gap().is_some_and(|g| g <= target));
    }
    let mut trace = Vec::new();
    write_trace_csv(&mut trace, &report)?;
    Ok((pass, m, trace))
}

fn run_kl_scan(cfg: &RunConfig, ctx: &Context, seed: u64) -> Result<Run> {
    let k = &cfg.kl_scan;
    let opts = KlScanOptions {
        n_samples: k.samples,
        seed,
        mu: k.mu,
        eta: k.eta,
        batch: k.batch,
        stat_k: k.stat_k,
        denominator_floor: k.denominator_floor,
        include_optimum: k.include_optimum,
    };
    let report = kl_scan(ctx.model()?, ctx.optimum()?, &opts)?;
    let mut m = Metrics::new();
    m.set("reference_opt", report.reference_opt);
    m.set("mu_theoretical", report.mu_theoretical);
    m.set("mu_used", report.mu_used);
    m.set("worst_ratio", report.worst_ratio);
    m.set("empirical_mu", report.empirical_mu);
    m.set("excluded", report.excluded as f64);
    if let Some(mu) = report.mu_used {
        m.set("violations", report.violations(mu) as f64);
    }
    let mut trace = Vec::new();
    write_kl_scan_csv(&mut trace, &report)?;
    Ok((Some(report.pass), m, trace))
}

fn run_fd_check(cfg: &RunConfig, ctx: &Context, seed: u64) -> Result<Run> {
    let model = ctx.model()?;
    let f = &cfg.fd_check;
    let exact = model.exact_gradient();
    let step = f.step.unwrap_or(if exact { 1e-6 } else { 0.05 });
    let margin = f.margin.unwrap_or(if exact { 1e-4 } else { 0.2 });
    let sets = model.feasible_sets();
    let mut rng = stream_rng(seed, POINT_STREAM);
    let mut rows = Vec::new();
    let mut worst = 0.0f64;
    let mut skipped = 0;
    for p in 0..f.points {
        let theta = sample_interior_params(&sets, &model.template(), margin, 1_000_000, &mut rng)?;
        if exact {
            let grad = model.gradient(&theta, 0, 0)?.mean;
            let check = match model {
                // Row sums are broken by a single-coordinate perturbation.
                Model::Tabular(e) => fd_gradient_check(|x| e.extended_cost(x), &grad, &theta, &sets, step)?,
                _ => fd_gradient_check(|x| model.cost(x), &grad, &theta, &sets, step)?,
            };
            worst = worst.max(check.max_rel_error);
            skipped += check.skipped.len();
            for e in &check.entries {
                rows.push(vec![
                    p.to_string(),
                    e.index.to_string(),
                    e.analytic.to_string(),
                    e.fd.to_string(),
                    e.rel_error.to_string(),
                ]);
            }
        } else {
            // IPA and the differences share paths, so their errors are
            // positively correlated and the combined stderr is conservative.
            let s = derive_seed(seed, p as u64);
            let est = model.gradient(&theta, f.batch, s)?;
            let se = est.stderr.context("Monte Carlo gradient without standard errors")?;
            let check = crn_fd_check(model, &est.mean, &se, &theta, &sets, step, f.batch, s)?;
            worst = worst.max(check.max_z);
            skipped += check.skipped.len();
            for e in &check.entries {
                rows.push(vec![
                    p.to_string(),
                    e.index.to_string(),
                    e.estimate.to_string(),
                    e.fd.to_string(),
                    e.z.to_string(),
                ]);
            }
        }
    }
    let (key, limit) = if exact { ("max_rel_error", f.tolerance) } else { ("max_z", f.stat_k) };
    let mut m = Metrics::new();
    m.set(key, worst);
    m.set("step", step);
    m.set("skipped", skipped as f64);
    let mut trace = Vec::new();
    write_csv(&mut trace, FD_CHECK_SCHEMA, &["point", "index", "gradient", "fd", "error"], &rows)?;
    Ok((Some(worst <= limit), m, trace))
}

fn run_dp_oracle(cfg: &RunConfig, ctx: &Context, seed: u64) -> Result<Run> {
    let opt = ctx.optimum()?;
    let d = &cfg.dp_oracle;
    let mc = mc_cost(ctx.model()?, &opt.theta, d.mc_paths, seed)?;
    let diff = (mc.mean - opt.value).abs();
    let z = if mc.stderr > 0.0 {
        diff / mc.stderr
    } else if diff <= 1e-12 * (1.0 + opt.value.abs()) {
        0.0
    } else {
        f64::INFINITY
    };
    let mut m = Metrics::new();
    m.set("dp_value", opt.value);
    m.set("mc_mean", mc.mean);
    m.set("mc_stderr", mc.stderr);
    m.set("z", z);
    let mut rows = Vec::new();
    for (t, b) in opt.theta.blocks.iter().enumerate() {
        for c in 0..b.ncols() {
            for r in 0..b.nrows() {
                rows.push(vec![t.to_string(), r.to_string(), c.to_string(), b[(r, c)].to_string()]);
            }
        }
    }
    let mut trace = Vec::new();
    write_csv(&mut trace, DP_ORACLE_SCHEMA, &["period", "row", "col", "theta"], &rows)?;
    Ok((Some(z <= d.stat_k), m, trace))
}

fn run_seq_lemma(cfg: &RunConfig, seed: u64) -> Result<Run> {
    let s = &cfg.seq_lemma;
    let mut rows = Vec::new();
    let mut ok = true;
    let search = sequence_lemma_search(s.random, s.max_horizon, seed)?;
    ok &= search.counterexamples == 0;
    rows.push(vec![
        "random".into(),
        String::new(),
        String::new(),
        s.max_horizon.to_string(),
        search.worst_relative_ratio.to_string(),
        "1".into(),
        (search.counterexamples == 0).to_string(),
    ]);
    for &(m_g, g, horizon) in &s.hard {
        let ratio = appendix_hard_instance(m_g, g, horizon)?.ratio();
        let target = appendix_ratio_target(m_g, g, horizon);
        ok &= ratio >= target;
        rows.push(vec![
            "hard".into(),
            m_g.to_string(),
            g.to_string(),
            horizon.to_string(),
            ratio.to_string(),
            target.to_string(),
            (ratio >= target).to_string(),
        ]);
    }
    for &(m_g, g, horizon) in &s.weak {
        let w = weak_lemma_instance(m_g, g, horizon)?;
        ok &= w.ok;
        rows.push(vec![
            "weak".into(),
            m_g.to_string(),
            g.to_string(),
            horizon.to_string(),
            w.ratio.to_string(),
            w.target.to_string(),
            w.ok.to_string(),
        ]);
    }
    let mut m = Metrics::new();
    m.set("instances", search.instances as f64);
    m.set("counterexamples", search.counterexamples as f64);
    m.set("worst_relative_ratio", search.worst_relative_ratio);
    let mut trace = Vec::new();
    write_csv(&mut trace, SEQ_LEMMA_SCHEMA, &["kind", "m_g", "g", "horizon", "ratio", "target", "ok"], &rows)?;
    Ok((Some(ok), m, trace))
}

fn run_seq_decomp(cfg: &RunConfig, ctx: &Context, seed: u64) -> Result<Run> {
    let model = ctx.model()?;
    let reference = ctx.reference.as_ref().context("DP reference was not prepared")?;
    let d = &cfg.seq_decomp;
    let sets = model.feasible_sets();
    let horizon = model.horizon();
    let mut rng = stream_rng(seed, POINT_STREAM);
    let mut rows = Vec::new();
    let (mut fails, mut inconclusive, mut checks) = (0usize, 0usize, 0usize);
    let mut min_margin = f64::INFINITY;
    for p in 0..d.points {
        let theta = sample_params(&sets, &model.template(), &mut rng);
        for t in 0..horizon {
            for k in t + 1..horizon {
                let s = derive_seed(seed, checks as u64);
                let r = seq_decomp_spot_check(model, reference, &theta, t, k, d.batch, s, d.stat_k)?;
                checks += 1;
                min_margin = min_margin.min(r.margin);
                match r.status {
                    DecompStatus::Fail => fails += 1,
                    DecompStatus::Inconclusive => inconclusive += 1,
                    DecompStatus::Pass => {}
                }
                let status = serde_json::to_value(r.status)?;
                rows.push(vec![
                    p.to_string(),
                    t.to_string(),
                    k.to_string(),
                    r.lhs.to_string(),
                    r.rhs.to_string(),
                    r.margin.to_string(),
                    r.stderr.to_string(),
                    status.as_str().unwrap_or_default().to_owned(),
                ]);
            }
        }
    }
    let mut m = Metrics::new();
    m.set("checks", checks as f64);
    m.set("fails", fails as f64);
    m.set("inconclusive", inconclusive as f64);
    m.set("min_margin", min_margin.is_finite().then_some(min_margin));
    let mut trace = Vec::new();
    write_csv(&mut trace, SEQ_DECOMP_SCHEMA, &["point", "t", "k", "lhs", "rhs", "margin", "stderr", "status"], &rows)?;
    Ok((Some(fails == 0), m, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use pglab_core::params::{Layout, PolicyParams};

    fn report(objective: Vec<f64>) -> ConvergenceReport {
        ConvergenceReport {
            objective_iters: (0..objective.len()).map(|k| 10 * k).collect(),
            objective_trace: objective,
            pg_norm_trace: Vec::new(),
            step_size: 1.0,
            smoothness_l: 1.0,
            fitted_rate: None,
            reference_opt: Some(1.0),
            batch_size: None,
            seed: None,
            iterations: 0,
            elapsed_secs: 0.0,
            final_params: PolicyParams::new(Layout::Inventory, Vec::new()),
        }
    }

    #[test]
    fn plateau_averages_the_tail() {
        let r = report(vec![5.0, 3.0, 2.0, 1.5, 1.5]);
        assert_eq!(plateau_gap(&r, 1.0, 0.4), Some(0.5));
        assert_eq!(plateau_gap(&r, 1.0, 1.0), Some((4.0 + 2.0 + 1.0 + 0.5 + 0.5) / 5.0));
        assert_eq!(plateau_gap(&report(Vec::new()), 1.0, 0.5), None);
    }

    #[test]
    fn rises_beyond_roundoff() {
        assert_eq!(first_rise(&[3.0, 2.0, 2.0, 1.0]), None);
        assert_eq!(first_rise(&[3.0, 2.0, 2.5, 1.0]), Some(1));
        assert_eq!(first_rise(&[1.0, 1.0 + 1e-14]), None);
    }

    #[test]
    fn first_hit_of_the_target() {
        let r = report(vec![5.0, 3.0, 2.0, 1.5, 1.5]);
        assert_eq!(iters_to_target(&r, 1.0, 1.0), Some(20));
        assert_eq!(iters_to_target(&r, 1.0, 0.1), None);
    }
}
