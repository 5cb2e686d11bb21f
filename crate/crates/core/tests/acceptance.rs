//! Acceptance harness: one PASS/FAIL line per criterion, tolerances pinned.
//! Run with `cargo test -p pglab-core --test acceptance`.

use std::time::Instant;

use pglab_core::desk;
use pglab_core::envs::cash::CashBalance;
use pglab_core::envs::grid::GridConfig;
use pglab_core::envs::inventory::Inventory;
use pglab_core::envs::Model;
use pglab_core::landscape::{
    appendix_hard_instance, appendix_ratio_target, crn_fd_check, fd_gradient_check, kl_scan, seq_decomp_spot_check,
    sequence_lemma_search, weak_lemma_instance, DecompReference, DecompStatus, KlScanOptions,
};
use pglab_core::mdp::{mc_cost, sample_trajectory, FamilyParams};
use pglab_core::objective::{AsExact, AsStochastic, PolicyObjective};
use pglab_core::optim::{estimate_smoothness, pgd, psgd, sample_interior_params, sample_params, PgdOptions};
use pglab_core::report::write_trace_csv;
use pglab_core::rng::stream_rng;
use pglab_core::{ConvergenceReport, PolicyParams, Result};
use rayon::prelude::*;

const SEED: u64 = 20_240_601;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Result<Outcome> {
    Ok(Outcome { pass, detail })
}

/// Interior random points: resample until every coordinate is at least
/// `margin` away from its constraints.
fn interior_samples<O: PolicyObjective>(env: &O, n: usize, margin: f64, seed: u64) -> Vec<PolicyParams> {
    let sets = env.feasible_sets();
    let mut rng = stream_rng(seed, 1);
    (0..n)
        .map(|_| sample_interior_params(&sets, &env.template(), margin, 1_000_000, &mut rng).expect("interior point"))
        .collect()
}

fn smoothness<O: PolicyObjective>(env: &O, batch: usize) -> Result<f64> {
    let oracle = AsExact { objective: env, batch, seed: SEED };
    estimate_smoothness(&oracle, &env.feasible_sets(), &env.template(), 200, SEED)
}

fn c1_exact_gradients() -> Result<Outcome> {
    let tab = desk::tabular_desk();
    let mut worst_tab: f64 = 0.0;
    for th in interior_samples(&tab, 50, 1e-4, SEED) {
        let g = tab.gradient(&th)?;
        let check = fd_gradient_check(|p| tab.extended_cost(p), &g, &th, &tab.feasible_sets(), 1e-6)?;
        worst_tab = worst_tab.max(check.max_rel_error);
    }
    let lqr = desk::lqr_desk();
    let mut worst_lqr: f64 = 0.0;
    for th in interior_samples(&lqr, 50, 1e-4, SEED) {
        let g = lqr.gradient(&th)?;
        let check = fd_gradient_check(|p| lqr.cost(p), &g, &th, &lqr.feasible_sets(), 1e-6)?;
        worst_lqr = worst_lqr.max(check.max_rel_error);
    }
    outcome(
        worst_tab < 1e-6 && worst_lqr < 1e-6,
        format!("max rel err tabular {worst_tab:.2e}, lqr {worst_lqr:.2e} (< 1e-6, 50 points each)"),
    )
}

fn ipa_vs_crn<O: PolicyObjective>(
    env: &O,
    ipa: impl Fn(&PolicyParams, u64) -> Result<(PolicyParams, PolicyParams)>,
) -> Result<(f64, usize)> {
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for (i, th) in interior_samples(env, 10, 0.2, SEED).into_iter().enumerate() {
        let seed = SEED + i as u64;
        let (g, se) = ipa(&th, seed)?;
        let check = crn_fd_check(env, &g, &se, &th, &env.feasible_sets(), 0.05, 100_000, seed)?;
        worst = worst.max(check.max_z);
        checked += check.entries.len();
    }
    Ok((worst, checked))
}

fn c2_ipa_gradients() -> Result<Outcome> {
    let inv = desk::inventory_desk();
    let (z_inv, n_inv) = ipa_vs_crn(&inv, |th, s| inv.ipa(th, 100_000, s).map(|e| (e.gradient, e.stderr)))?;
    let cash = desk::cash_desk();
    let (z_cash, n_cash) = ipa_vs_crn(&cash, |th, s| cash.ipa(th, 100_000, s).map(|e| (e.gradient, e.stderr)))?;
    outcome(
        z_inv <= 3.0 && z_cash <= 3.0,
        format!(
            "max |IPA - CRN FD| / combined stderr: inventory {z_inv:.2} over {n_inv} coords, cash {z_cash:.2} over {n_cash} coords (<= 3)"
        ),
    )
}

fn pgd_from_starts<O: PolicyObjective>(env: &O) -> Result<(f64, f64)> {
    let opt = env.optimum()?;
    let l = smoothness(env, 0)?;
    let sets = env.feasible_sets();
    let oracle = AsExact::new(env);
    let starts: Vec<PolicyParams> =
        (0..20).map(|i| sample_params(&sets, &env.template(), &mut stream_rng(SEED, 100 + i))).collect();
    let reports: Vec<ConvergenceReport> = starts
        .par_iter()
        .map(|x0| pgd(&oracle, &sets, x0, &PgdOptions::new(10_000, l).with_reference(opt.value)))
        .collect::<Result<_>>()?;
    let worst_gap = reports.iter().map(|r| r.final_gap().unwrap_or(f64::INFINITY)).fold(0.0, f64::max);
    let worst_rate = reports.iter().map(|r| r.fitted_rate.unwrap_or(f64::INFINITY)).fold(0.0, f64::max);
    Ok((worst_gap, worst_rate))
}

fn c3_pgd_linear_convergence() -> Result<Outcome> {
    let (gap_t, rate_t) = pgd_from_starts(&desk::tabular_desk())?;
    let (gap_l, rate_l) = pgd_from_starts(&desk::lqr_desk())?;
    let pass = gap_t < 1e-8 && gap_l < 1e-8 && rate_t <= 1.0 - 1e-6 && rate_l <= 1.0 - 1e-6;
    outcome(
        pass,
        format!(
            "20 starts, <= 1e4 iters: worst gap tabular {gap_t:.1e}, lqr {gap_l:.1e} (< 1e-8); worst fitted rate tabular {rate_t:.4}, lqr {rate_l:.4} (<= 1 - 1e-6)"
        ),
    )
}

fn c4_kl_inequality() -> Result<Outcome> {
    let opts = KlScanOptions { n_samples: 200, seed: SEED, ..Default::default() };
    let mut parts = Vec::new();
    let mut pass = true;
    let tab = desk::tabular_desk();
    let rep = kl_scan(&tab, &tab.optimum()?, &opts)?;
    // Negative control on the same samples: ten times the tightest constant.
    let control_fails = !rep.passes_with(10.0 * rep.empirical_mu);
    let million = rep.passes_with(1e6 * tab.kl_constant());
    pass &= rep.pass && control_fails;
    parts.push(format!(
        "tabular pass={} mu_l={:.2e} empirical mu={:.2e} (control 10x empirical fails={control_fails}; 1e6 mu_l still passes={million})",
        rep.pass, tab.kl_constant(), rep.empirical_mu
    ));
    let inv = desk::inventory_desk();
    let rep = kl_scan(&inv, &inv.optimum()?, &opts)?;
    pass &= rep.pass;
    parts.push(format!(
        "inventory pass={} mu_l={:.2e} empirical mu={:.2e}",
        rep.pass,
        inv.kl_constant(),
        rep.empirical_mu
    ));
    let cash = desk::cash_desk();
    let rep = kl_scan(&cash, &cash.optimum()?, &opts)?;
    pass &= rep.pass;
    parts.push(format!("cash pass={} mu_l={:.2e} empirical mu={:.2e}", rep.pass, cash.kl_constant(), rep.empirical_mu));
    let lqr = desk::lqr_desk();
    let rep = kl_scan(&lqr, &PolicyObjective::optimum(&lqr)?, &opts)?;
    pass &= rep.pass;
    parts.push(format!("lqr worst ratio {:.3e} (finite={})", rep.worst_ratio, rep.worst_ratio.is_finite()));
    outcome(pass, format!("200 samples each; {}", parts.join("; ")))
}

struct PsgdSetup<'a> {
    env: &'a Inventory,
    l_star: f64,
    smoothness: f64,
}

fn psgd_run(
    s: &PsgdSetup,
    x0: &PolicyParams,
    n: usize,
    iters: usize,
    seed: u64,
    every: usize,
) -> Result<ConvergenceReport> {
    let eval = |x: &PolicyParams| s.env.cost(x);
    let opts = PgdOptions::new(iters, s.smoothness).with_reference(s.l_star);
    psgd(&AsStochastic(s.env), &s.env.feasible_sets(), x0, &opts, n, seed, Some(&eval), every)
}

fn c5_psgd_plateau(s: &PsgdSetup) -> Result<Outcome> {
    let iters = 200;
    let batches = [32usize, 64, 128, 256];
    let mut plateaus = Vec::new();
    for &n in &batches {
        let gaps: Vec<f64> = (0..20u64)
            .into_par_iter()
            .map(|seed| {
                let r = psgd_run(s, &s.env.template(), n, iters, SEED + seed, 10)?;
                let tail: Vec<f64> = r
                    .objective_iters
                    .iter()
                    .zip(&r.objective_trace)
                    .filter(|(k, _)| **k >= iters / 2)
                    .map(|(_, v)| v - s.l_star)
                    .collect();
                Ok(tail.iter().sum::<f64>() / tail.len() as f64)
            })
            .collect::<Result<_>>()?;
        plateaus.push(gaps.iter().sum::<f64>() / gaps.len() as f64);
    }
    let base = plateaus[0];
    let factors: Vec<f64> = batches.iter().zip(&plateaus).map(|(&n, &p)| p / (base * 32.0 / n as f64)).collect();
    let pass = factors.iter().all(|&f| (0.5..=2.0).contains(&f));
    let table: Vec<String> = batches.iter().zip(&plateaus).map(|(n, p)| format!("N={n}: {p:.3e}")).collect();
    outcome(pass, format!("{}; ratio to 1/N law {:?} (within [0.5, 2])", table.join(", "), round(&factors)))
}

fn round(xs: &[f64]) -> Vec<f64> {
    xs.iter().map(|x| (x * 1000.0).round() / 1000.0).collect()
}

fn c6_sample_complexity(s: &PsgdSetup) -> Result<Outcome> {
    let x0 = s.env.constant_policy(0.0);
    let eps = [1e-2, 1e-3];
    let mut best = [f64::INFINITY; 2];
    for n in [32usize, 64, 128, 256] {
        let per_seed: Vec<[f64; 2]> = (0..5u64)
            .into_par_iter()
            .map(|seed| {
                let r = psgd_run(s, &x0, n, 60, SEED + 50 + seed, 1)?;
                let mut hit = [f64::INFINITY; 2];
                for (j, e) in eps.iter().enumerate() {
                    let target = e * s.l_star.abs();
                    if let Some(k) = r.objective_trace.iter().position(|v| v - s.l_star <= target) {
                        hit[j] = (k * n) as f64;
                    }
                }
                Ok(hit)
            })
            .collect::<Result<_>>()?;
        for j in 0..2 {
            let mean = per_seed.iter().map(|h| h[j]).sum::<f64>() / per_seed.len() as f64;
            best[j] = best[j].min(mean);
        }
    }
    // Per decade of epsilon the sample count may grow at most 10x, with tolerance factor 3.
    let growth = best[1] / best[0];
    outcome(
        growth.is_finite() && growth <= 30.0,
        format!(
            "min samples to eps=1e-2: {:.0}, eps=1e-3: {:.0}; growth per decade {growth:.2} (<= 10 x 3)",
            best[0], best[1]
        ),
    )
}

fn c7_sequence_lemma() -> Result<Outcome> {
    let search = sequence_lemma_search(10_000, 12, SEED)?;
    let mut pass = search.counterexamples == 0;
    let mut parts = vec![format!(
        "{} counterexamples in 10^4 (worst lhs/rhs {:.3})",
        search.counterexamples, search.worst_relative_ratio
    )];
    for (m, g, t) in [(2.0, 2.0, 8), (4.0, 4.0, 16)] {
        let inst = appendix_hard_instance(m, g, t)?;
        let (ratio, target) = (inst.ratio(), appendix_ratio_target(m, g, t));
        pass &= ratio >= target;
        let premise = match inst.premise_violation() {
            None => "premise holds".to_string(),
            Some((t, l, r)) => format!("premise violated at t={t}: {l:.3} > {r:.3}"),
        };
        parts.push(format!("hard ({m},{g},{t}) ratio {ratio:.1} >= {target:.1}, {premise}"));
    }
    let weak = weak_lemma_instance(2.0, 2.0, 5)?;
    pass &= weak.ok;
    parts.push(format!("weak (2,2,5) ratio {:.0} >= {:.0}", weak.ratio, weak.target));
    outcome(pass, parts.join("; "))
}

fn c8_sequential_decomposition() -> Result<Outcome> {
    let tab = Model::Tabular(desk::tabular_desk());
    let reference = DecompReference::new(&tab, GridConfig::EVAL)?;
    let Model::Tabular(env) = &tab else { unreachable!() };
    let mut worst_tab = f64::INFINITY;
    let mut fails = 0;
    for th in interior_samples(env, 20, 0.0, SEED + 8) {
        for k in 1..env.horizon {
            for t in 0..k {
                let r = seq_decomp_spot_check(&tab, &reference, &th, t, k, 0, 0, 3.0)?;
                worst_tab = worst_tab.min(r.margin);
                fails += usize::from(r.margin < -1e-10);
            }
        }
    }
    let mut parts = vec![format!("tabular 20 theta x all (t,k): min margin {worst_tab:.3e}, {fails} negative")];
    for model in [Model::Inventory(desk::inventory_desk()), Model::CashBalance(desk::cash_desk())] {
        let reference = DecompReference::new(&model, GridConfig::EVAL)?;
        let thetas = match &model {
            Model::Inventory(e) => interior_samples(e, 5, 0.0, SEED + 9),
            Model::CashBalance(e) => interior_samples(e, 5, 0.0, SEED + 9),
            _ => unreachable!(),
        };
        let (mut worst_z, mut bad, mut count) = (f64::INFINITY, 0, 0);
        for (i, th) in thetas.iter().enumerate() {
            for k in 1..4 {
                for t in 0..k {
                    let r = seq_decomp_spot_check(&model, &reference, th, t, k, 100_000, SEED + i as u64, 3.0)?;
                    count += 1;
                    bad += usize::from(r.status == DecompStatus::Fail);
                    if r.stderr > 0.0 {
                        worst_z = worst_z.min(r.margin / r.stderr);
                    }
                }
            }
        }
        fails += bad;
        let name = PolicyObjective::family(&model);
        parts.push(format!("{name} {count} checks: min margin/stderr {worst_z:.2}, {bad} below -3 stderr"));
    }
    outcome(fails == 0, parts.join("; "))
}

fn one_period_inventory() -> Result<Inventory> {
    let FamilyParams::Inventory(mut p) = desk::inventory_spec().params else { unreachable!() };
    p.holding.truncate(1);
    p.backlog.truncate(1);
    Inventory::new(1, p)
}

fn one_period_cash() -> Result<CashBalance> {
    let FamilyParams::CashBalance(mut p) = desk::cash_spec().params else { unreachable!() };
    p.holding.truncate(1);
    p.backlog.truncate(1);
    CashBalance::new(1, p)
}

fn c9_dp_self_consistency() -> Result<Outcome> {
    let inv = desk::inventory_desk();
    let dp = inv.dp_oracle(GridConfig::ORACLE)?;
    let mc = mc_cost(&inv, &dp.theta, 1_000_000, SEED)?;
    let z_inv = (mc.mean - dp.value).abs() / mc.stderr;
    let cash = desk::cash_desk();
    let dpc = cash.dp_oracle(GridConfig::ORACLE)?;
    let mcc = mc_cost(&cash, &dpc.theta, 1_000_000, SEED)?;
    let z_cash = (mcc.mean - dpc.value).abs() / mcc.stderr;

    // One period: critical fractiles.
    let step = (GridConfig::ORACLE.points as f64 - 1.0).recip();
    let inv1 = one_period_inventory()?;
    let d1 = inv1.dp_oracle(GridConfig::ORACLE)?;
    let (h, b) = (inv1.params.holding[0], inv1.params.backlog[0]);
    let inv_err = inv1
        .params
        .demand
        .iter()
        .enumerate()
        .map(|(i, d)| (d1.theta.blocks[0][i] - d.quantile(b / (h + b)).clamp(0.0, inv1.params.cap)).abs())
        .fold(0.0, f64::max);
    let inv_tol = step * inv1.params.cap;
    let cash1 = one_period_cash()?;
    let c1 = cash1.dp_oracle(GridConfig::ORACLE)?;
    let p = &cash1.params;
    let (h, b) = (p.holding[0], p.backlog[0]);
    let lo = p.demand.quantile((b - p.order_cost) / (h + b)).clamp(p.lower, p.upper);
    let hi = p.demand.quantile((b + p.refund) / (h + b)).clamp(p.lower, p.upper);
    let cash_err = (c1.theta.blocks[0][0] - lo).abs().max((c1.theta.blocks[0][1] - hi).abs());
    let cash_tol = step * (p.upper - p.lower);
    outcome(
        z_inv <= 3.0 && z_cash <= 3.0 && inv_err <= inv_tol && cash_err <= cash_tol,
        format!(
            "|MC - DP| / stderr at n=1e6: inventory {z_inv:.2}, cash {z_cash:.2} (<= 3); T=1 fractile error inventory {inv_err:.1e} (<= {inv_tol:.1e}), cash {cash_err:.1e} (<= {cash_tol:.1e})"
        ),
    )
}

fn trace_bytes(r: &ConvergenceReport) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_trace_csv(&mut buf, r)?;
    Ok(buf)
}

fn c10_reproducibility(s: &PsgdSetup) -> Result<Outcome> {
    let run = || psgd_run(s, &s.env.template(), 64, 40, SEED, 5);
    let a = run()?;
    let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().expect("thread pool");
    let b = single.install(run)?;
    let same_trace = trace_bytes(&a)? == trace_bytes(&b)? && a.final_params == b.final_params;
    let cash = desk::cash_desk();
    let th = cash.template();
    let same_mc = mc_cost(&cash, &th, 5_000, 3)? == single.install(|| mc_cost(&cash, &th, 5_000, 3))?;
    let lqr = desk::lqr_desk();
    let same_path =
        sample_trajectory(&lqr, &lqr.zero_policy(), 11)? == sample_trajectory(&lqr, &lqr.zero_policy(), 11)?;
    outcome(
        same_trace && same_mc && same_path,
        format!(
            "psgd trace bytes identical across thread counts={same_trace}, mc_cost={same_mc}, trajectory={same_path}"
        ),
    )
}

fn main() {
    let mut failed = 0;
    let mut report = |id: usize, f: &dyn Fn() -> Result<Outcome>| {
        let start = Instant::now();
        let (pass, detail) = match f() {
            Ok(o) => (o.pass, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        failed += usize::from(!pass);
        println!(
            "criterion {id:>2}: {} [{:.1}s] {detail}",
            if pass { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64()
        );
    };
    let inv = desk::inventory_desk();
    let setup = inv
        .optimum()
        .and_then(|opt| Ok(PsgdSetup { env: &inv, l_star: opt.value, smoothness: smoothness(&inv, 100_000)? }));
    report(1, &c1_exact_gradients);
    report(2, &c2_ipa_gradients);
    report(3, &c3_pgd_linear_convergence);
    report(4, &c4_kl_inequality);
    match &setup {
        Ok(s) => {
            report(5, &|| c5_psgd_plateau(s));
            report(6, &|| c6_sample_complexity(s));
        }
        Err(e) => {
            let msg = format!("{e}");
            report(5, &|| outcome(false, format!("setup error: {msg}")));
            report(6, &|| outcome(false, format!("setup error: {msg}")));
        }
    }
    report(7, &c7_sequence_lemma);
    report(8, &c8_sequential_decomposition);
    report(9, &c9_dp_self_consistency);
    match &setup {
        Ok(s) => report(10, &|| c10_reproducibility(s)),
        Err(_) => report(10, &|| outcome(false, "setup error".into())),
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
