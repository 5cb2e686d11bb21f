use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::feasible::{contains_params, pg_norm_sq_params, project_params, FeasibleSet};
use crate::error::{Error, Result};
use crate::params::PolicyParams;
use crate::rng::derive_seed;

/// Deterministic first-order oracle.
pub trait ExactOracle {
    fn value(&self, theta: &PolicyParams) -> Result<f64>;
    fn gradient(&self, theta: &PolicyParams) -> Result<PolicyParams>;
}

/// Mini-batch gradient oracle: unbiased, variance at most `sigma^2 / batch`,
/// and a deterministic function of `(theta, batch, seed)`.
pub trait StochasticOracle {
    fn gradient_estimate(&self, theta: &PolicyParams, batch: usize, seed: u64) -> Result<PolicyParams>;
}

/// Closure-backed exact oracle, mostly for tests and small examples.
pub struct FnOracle<F, G> {
    pub f: F,
    pub grad: G,
}

impl<F, G> ExactOracle for FnOracle<F, G>
where
    F: Fn(&PolicyParams) -> f64,
    G: Fn(&PolicyParams) -> PolicyParams,
{
    fn value(&self, theta: &PolicyParams) -> Result<f64> {
        Ok((self.f)(theta))
    }
    fn gradient(&self, theta: &PolicyParams) -> Result<PolicyParams> {
        Ok((self.grad)(theta))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PgdOptions {
    pub iters: usize,
    /// Smoothness constant; the step size is `1 / smoothness`.
    pub smoothness: f64,
    /// Early stop once the projected-gradient norm drops below this.
    pub tolerance: f64,
    pub reference_opt: Option<f64>,
}

impl PgdOptions {
    pub fn new(iters: usize, smoothness: f64) -> Self {
        Self { iters, smoothness, tolerance: 1e-10, reference_opt: None }
    }

    pub fn with_reference(mut self, opt: f64) -> Self {
        self.reference_opt = Some(opt);
        self
    }

    pub fn with_tolerance(mut self, tol: f64) -> Self {
        self.tolerance = tol;
        self
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConvergenceReport {
    /// Objective at iterate `k` (for psgd: at evaluated iterates only, see
    /// `objective_iters`).
    pub objective_trace: Vec<f64>,
    pub objective_iters: Vec<usize>,
    pub pg_norm_trace: Vec<f64>,
    pub step_size: f64,
    pub smoothness_l: f64,
    pub fitted_rate: Option<f64>,
    pub reference_opt: Option<f64>,
    pub batch_size: Option<usize>,
    pub seed: Option<u64>,
    pub iterations: usize,
    pub elapsed_secs: f64,
    pub final_params: PolicyParams,
}

impl ConvergenceReport {
    pub fn final_objective(&self) -> Option<f64> {
        self.objective_trace.last().copied()
    }

    pub fn final_gap(&self) -> Option<f64> {
        Some(self.final_objective()? - self.reference_opt?)
    }
}

fn check_start(sets: &[FeasibleSet], x0: &PolicyParams, smoothness: f64) -> Result<()> {
    if !(smoothness > 0.0) || !smoothness.is_finite() {
        return Err(Error::InvalidArgument(format!("smoothness constant must be positive, got {smoothness}")));
    }
    if !contains_params(sets, x0, 1e-8) {
        return Err(Error::InfeasiblePoint("starting point is outside the feasible set".into()));
    }
    Ok(())
}

/// Projected gradient descent `x <- P(x - grad f(x) / L)`.
pub fn pgd<O: ExactOracle + ?Sized>(
    oracle: &O,
    sets: &[FeasibleSet],
    x0: &PolicyParams,
    opts: &PgdOptions,
) -> Result<ConvergenceReport> {
    check_start(sets, x0, opts.smoothness)?;
    let start = Instant::now();
    let step = 1.0 / opts.smoothness;
    let mut x = x0.clone();
    let mut objective = Vec::with_capacity(opts.iters + 1);
    let mut pg = Vec::with_capacity(opts.iters + 1);
    let mut k = 0;
    loop {
        let f = oracle.value(&x)?;
        let g = oracle.gradient(&x)?;
        if !f.is_finite() || !g.is_finite() {
            return Err(Error::numerical_at(k, "non-finite objective or gradient"));
        }
        let pgn = pg_norm_sq_params(sets, &x, &g, step)?.sqrt();
        objective.push(f);
        pg.push(pgn);
        if k >= opts.iters || pgn < opts.tolerance {
            break;
        }
        x = project_params(sets, &x.axpy(-step, &g))?;
        k += 1;
    }
    let fitted_rate = opts.reference_opt.and_then(|opt| fit_contraction(&objective, opt));
    Ok(ConvergenceReport {
        objective_iters: (0..objective.len()).collect(),
        objective_trace: objective,
        pg_norm_trace: pg,
        step_size: step,
        smoothness_l: opts.smoothness,
        fitted_rate,
        reference_opt: opts.reference_opt,
        batch_size: None,
        seed: None,
        iterations: k,
        elapsed_secs: start.elapsed().as_secs_f64(),
        final_params: x,
    })
}

/// Objective callback used by [`psgd`] to record the trace.
pub type Evaluator<'a> = &'a dyn Fn(&PolicyParams) -> Result<f64>;

/// Projected stochastic gradient descent with mini-batches of size `batch`.
///
/// The gradient at iteration `k` uses seed `derive_seed(seed, k)`. When an
/// `evaluate` callback is supplied the objective is recorded every
/// `eval_every` iterations and at the final iterate.
#[allow(clippy::too_many_arguments)]
pub fn psgd<O: StochasticOracle + ?Sized>(
    oracle: &O,
    sets: &[FeasibleSet],
    x0: &PolicyParams,
    opts: &PgdOptions,
    batch: usize,
    seed: u64,
    evaluate: Option<Evaluator<'_>>,
    eval_every: usize,
) -> Result<ConvergenceReport> {
    check_start(sets, x0, opts.smoothness)?;
    if batch == 0 {
        return Err(Error::InvalidArgument("batch size must be at least 1".into()));
    }
    let start = Instant::now();
    let step = 1.0 / opts.smoothness;
    let every = eval_every.max(1);
    let mut x = x0.clone();
    let mut objective = Vec::new();
    let mut objective_iters = Vec::new();
    let mut pg = Vec::with_capacity(opts.iters);
    for k in 0..opts.iters {
        if let Some(eval) = evaluate {
            if k % every == 0 {
                objective.push(eval(&x)?);
                objective_iters.push(k);
            }
        }
        let g = oracle.gradient_estimate(&x, batch, derive_seed(seed, k as u64))?;
        if !g.is_finite() {
            return Err(Error::numerical_at(k, "non-finite stochastic gradient"));
        }
        pg.push(pg_norm_sq_params(sets, &x, &g, step)?.sqrt());
        x = project_params(sets, &x.axpy(-step, &g))?;
    }
    if let Some(eval) = evaluate {
        objective.push(eval(&x)?);
        objective_iters.push(opts.iters);
    }
    let fitted_rate = opts.reference_opt.and_then(|opt| fit_contraction(&objective, opt));
    Ok(ConvergenceReport {
        objective_trace: objective,
        objective_iters,
        pg_norm_trace: pg,
        step_size: step,
        smoothness_l: opts.smoothness,
        fitted_rate,
        reference_opt: opts.reference_opt,
        batch_size: Some(batch),
        seed: Some(seed),
        iterations: opts.iters,
        elapsed_secs: start.elapsed().as_secs_f64(),
        final_params: x,
    })
}

/// Per-iteration contraction factor `exp(slope)` from a least-squares fit
/// of `log(f_k - f*)` over the tail of the trace. The tail is the second
/// half of the iterates whose gap is still above the roundoff floor
/// `1e-10 * max(1, |f*|)`.
pub fn fit_contraction(objective: &[f64], opt: f64) -> Option<f64> {
    let floor = 1e-10 * opt.abs().max(1.0);
    let end = objective.iter().position(|f| f - opt <= floor).unwrap_or(objective.len());
    let begin = end / 2;
    if end < begin + 3 {
        return None;
    }
    let pts: Vec<(f64, f64)> = (begin..end).map(|k| (k as f64, (objective[k] - opt).ln())).collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return None;
    }
    Some((sxy / sxx).exp())
}
