//! Stochastic cash balance with i.i.d. signed demand and two-sided
//! base-stock policies `y_t = clamp(s_t, lower_t, upper_t)`.
//!
//! Ordering up costs `k` per unit and returning cash earns `q` per unit
//! (with `k + q >= 0`). As in the inventory model the stage cost is the
//! conditional expectation of the holding/backlog loss given `y_t`.

use std::f64::consts::E;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::demand::Demand;
use super::grid::{refine_argmin, Grid, GridConfig};
use super::{IpaEstimate, SeqDecompEstimate};
use crate::error::{Error, Result};
use crate::mdp::{chunked, draw_path, CostEstimate, PathRecord, Simulator};
use crate::optim::FeasibleSet;
use crate::params::{Layout, PolicyParams};
use crate::stats::{Moments, VecMoments};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CashParams {
    /// Unit cost `k` of raising the balance.
    pub order_cost: f64,
    /// Unit revenue `q` of lowering the balance.
    pub refund: f64,
    pub holding: Vec<f64>,
    pub backlog: Vec<f64>,
    pub demand: Demand,
    /// Policy bounds `lower <= theta_lower <= theta_upper <= upper`.
    pub lower: f64,
    pub upper: f64,
    /// Initial balance is uniform on `[init_lo, init_hi]`.
    pub init_lo: f64,
    pub init_hi: f64,
}

/// Two-sided base-stock rule: returns `(y, a)` with `y = clamp(s, lo, hi)`
/// and `a = y - s`.
pub fn policy_apply(lo: f64, hi: f64, s: f64) -> Result<(f64, f64)> {
    if !(lo <= hi) {
        return Err(Error::InvalidPolicy(format!("disordered band ({lo}, {hi})")));
    }
    let y = s.clamp(lo, hi);
    Ok((y, y - s))
}

/// Transaction cost `c(y, x) = k (y - x)^+ + q (x - y)^+`.
pub fn transaction_cost(k: f64, q: f64, y: f64, x: f64) -> f64 {
    k * (y - x).max(0.0) + q * (x - y).max(0.0)
}

#[derive(Debug, Clone)]
pub struct CashDpSolution {
    pub theta: PolicyParams,
    pub value: f64,
    pub grid: Grid,
    /// `f[t][g] = L_t(y) + E V*_{t+1}(y - D)` at `y = grid.point(g)`.
    pub f: Vec<Vec<f64>>,
    pub warnings: Vec<String>,
}

/// Value function of a band policy at one period, extended exactly beyond
/// the band.
struct BandValue<'a> {
    grid: &'a Grid,
    f: &'a [f64],
    lo: f64,
    hi: f64,
    f_lo: f64,
    f_hi: f64,
    k: f64,
    q: f64,
}

impl BandValue<'_> {
    fn at(&self, s: f64) -> f64 {
        if s <= self.lo {
            self.k * (self.lo - s) + self.f_lo
        } else if s >= self.hi {
            self.q * (s - self.hi) + self.f_hi
        } else {
            self.grid.interp(self.f, s)
        }
    }
}

#[derive(Debug, Clone)]
pub struct CashBalance {
    pub params: CashParams,
    pub horizon: usize,
    pub l_d: f64,
    /// `min(P(D >= upper), P(D <= lower))`.
    pub alpha_d: f64,
    pub mu_d: f64,
    pub l_rho: f64,
}

impl CashBalance {
    pub fn new(horizon: usize, params: CashParams) -> Result<Self> {
        let bad = |msg: String| Err(Error::InvalidEnv(msg));
        if horizon == 0 {
            return bad("horizon must be positive".into());
        }
        params.demand.validate()?;
        if !(params.order_cost + params.refund >= 0.0) {
            return bad(format!("need k + q >= 0, got k = {}, q = {}", params.order_cost, params.refund));
        }
        if params.holding.len() != horizon || params.backlog.len() != horizon {
            return bad(format!("holding and backlog need {horizon} entries"));
        }
        if params.holding.iter().chain(&params.backlog).any(|&c| !(c >= 0.0)) {
            return bad("holding and backlog costs must be nonnegative".into());
        }
        if !(params.lower < params.upper) {
            return bad("need lower < upper".into());
        }
        if !(params.init_lo < params.init_hi) {
            return bad("need init_lo < init_hi".into());
        }
        let d = &params.demand;
        let l_d = d.max_density();
        let alpha_d = (1.0 - d.cdf(params.upper)).min(d.cdf(params.lower));
        let mu_d = d.min_density_on(params.lower, params.upper);
        if !(alpha_d > 0.0) {
            return bad("demand must put positive mass beyond both bounds".into());
        }
        if !(mu_d > 0.0) {
            return bad("demand density must be bounded below on [lower, upper]".into());
        }
        let l_rho = 1.0 / (params.init_hi - params.init_lo);
        let env = CashBalance { params, horizon, l_d, alpha_d, mu_d, l_rho };
        if env.initial_coverage() < env.alpha_d {
            log::warn!(
                "initial balance puts {} mass beyond the bounds, below alpha_D = {}; first-period levels at the bounds have a vanishing gradient",
                env.initial_coverage(),
                env.alpha_d
            );
        }
        Ok(env)
    }

    /// `min(P(s_1 <= lower), P(s_1 >= upper))`, the first-period analogue
    /// of `alpha_D` that the KL constant presumes.
    pub fn initial_coverage(&self) -> f64 {
        let span = self.params.init_hi - self.params.init_lo;
        let below = ((self.params.lower - self.params.init_lo) / span).clamp(0.0, 1.0);
        let above = ((self.params.init_hi - self.params.upper) / span).clamp(0.0, 1.0);
        below.min(above)
    }

    pub fn feasible_sets(&self) -> Vec<FeasibleSet> {
        vec![FeasibleSet::OrderedBox { lo: self.params.lower, hi: self.params.upper }; self.horizon]
    }

    pub fn band_policy(&self, lo: f64, hi: f64) -> PolicyParams {
        PolicyParams::new(Layout::CashBalance, vec![DMatrix::from_column_slice(2, 1, &[lo, hi]); self.horizon])
    }

    pub fn check_feasible(&self, theta: &PolicyParams) -> Result<()> {
        theta.check_shape(Layout::CashBalance, self.horizon, 2, 1)?;
        let tol = 1e-9 * (1.0 + self.params.lower.abs() + self.params.upper.abs());
        for (t, b) in theta.blocks.iter().enumerate() {
            let (lo, hi) = (b[0], b[1]);
            if lo > hi + tol {
                return Err(Error::InvalidPolicy(format!("theta[{t}] = ({lo}, {hi}) is disordered")));
            }
            if lo < self.params.lower - tol || hi > self.params.upper + tol {
                return Err(Error::InfeasiblePoint(format!("theta[{t}] = ({lo}, {hi}) outside the bounds")));
            }
        }
        Ok(())
    }

    pub fn stage_loss(&self, t: usize, y: f64) -> (f64, f64) {
        let (h, b) = (self.params.holding[t], self.params.backlog[t]);
        (self.params.demand.newsvendor_loss(y, h, b), self.params.demand.newsvendor_slope(y, h, b))
    }

    fn init_state(&self, u: f64) -> f64 {
        self.params.init_lo + u * (self.params.init_hi - self.params.init_lo)
    }

    fn forward(&self, theta: &PolicyParams, initial: &[f64], periods: &[f64], ss: &mut [f64]) -> f64 {
        let (k, q) = (self.params.order_cost, self.params.refund);
        let mut s = self.init_state(initial[0]);
        let mut total = 0.0;
        for t in 0..self.horizon {
            ss[t] = s;
            let b = &theta.blocks[t];
            let y = s.max(b[0]).min(b[1]);
            total += transaction_cost(k, q, y, s) + self.stage_loss(t, y).0;
            s = y - self.params.demand.quantile(periods[t]);
        }
        total
    }

    /// Pathwise derivative; `grad` is flat with index `2 t` for the lower
    /// and `2 t + 1` for the upper level.
    fn backward(&self, theta: &PolicyParams, ss: &[f64], grad: &mut [f64]) {
        let (k, q) = (self.params.order_cost, self.params.refund);
        let mut w = 0.0;
        for t in (0..self.horizon).rev() {
            let (lo, hi, s) = (theta.blocks[t][0], theta.blocks[t][1], ss[t]);
            if lo >= s {
                grad[2 * t] += k + self.stage_loss(t, lo).1 + w;
                w = -k;
            } else if hi <= s {
                grad[2 * t + 1] += -q + self.stage_loss(t, hi).1 + w;
                w = q;
            } else {
                w += self.stage_loss(t, s).1;
            }
        }
    }

    pub fn ipa(&self, theta: &PolicyParams, n: usize, seed: u64) -> Result<IpaEstimate> {
        if n == 0 {
            return Err(Error::InvalidArgument("IPA needs at least one path".into()));
        }
        self.check_feasible(theta)?;
        let dim = 2 * self.horizon;
        let parts = chunked(n, seed, |rng, count| {
            let (mut init, mut per) = (Vec::new(), Vec::new());
            let mut ss = vec![0.0; self.horizon];
            let mut g = vec![0.0; dim];
            let mut gm = VecMoments::new(dim);
            let mut cm = Moments::default();
            for _ in 0..count {
                draw_path(self, rng, &mut init, &mut per);
                cm.push(self.forward(theta, &init, &per, &mut ss));
                g.iter_mut().for_each(|v| *v = 0.0);
                self.backward(theta, &ss, &mut g);
                gm.push(&g);
            }
            (gm, cm)
        });
        let mut gm = VecMoments::new(dim);
        let mut cm = Moments::default();
        for (g, c) in &parts {
            gm.merge(g);
            cm.merge(c);
        }
        Ok(IpaEstimate {
            gradient: PolicyParams::from_flat_like(theta, &gm.mean)?,
            stderr: PolicyParams::from_flat_like(theta, &gm.stderr())?,
            cost: CostEstimate::from_moments(&cm),
        })
    }

    fn recursion(&self, policy: Option<&PolicyParams>, cfg: GridConfig) -> Result<CashDpSolution> {
        if cfg.points < 2 || cfg.quadrature == 0 {
            return Err(Error::InvalidArgument("grid needs at least 2 points and 1 quadrature node".into()));
        }
        if let Some(theta) = policy {
            self.check_feasible(theta)?;
        }
        let (k, q) = (self.params.order_cost, self.params.refund);
        let (lower, upper) = (self.params.lower, self.params.upper);
        let grid = Grid::new(lower, upper, cfg.points);
        let ys = grid.points();
        let nodes = self.params.demand.quadrature(cfg.quadrature);
        let inv_q = 1.0 / cfg.quadrature as f64;
        let mut f_all = vec![Vec::new(); self.horizon];
        let mut bands = vec![DMatrix::zeros(2, 1); self.horizon];
        let mut warnings = Vec::new();
        // (lo, hi, f(lo), f(hi)) of the next period; None at the horizon.
        let mut next: Option<(f64, f64, f64, f64)> = None;
        for t in (0..self.horizon).rev() {
            let f_next = if t + 1 < self.horizon { f_all[t + 1].clone() } else { Vec::new() };
            let f = |y: f64| -> f64 {
                let tail = match next {
                    None => 0.0,
                    Some((lo, hi, f_lo, f_hi)) => {
                        let v = BandValue { grid: &grid, f: &f_next, lo, hi, f_lo, f_hi, k, q };
                        nodes.iter().map(|d| v.at(y - d)).sum::<f64>() * inv_q
                    }
                };
                self.stage_loss(t, y).0 + tail
            };
            let fv: Vec<f64> = ys.iter().map(|&y| f(y)).collect();
            let (lo, hi) = match policy {
                Some(theta) => (theta.blocks[t][0], theta.blocks[t][1].max(theta.blocks[t][0])),
                None => {
                    let lo_vals: Vec<f64> = ys.iter().zip(&fv).map(|(y, v)| k * y + v).collect();
                    let hi_vals: Vec<f64> = ys.iter().zip(&fv).map(|(y, v)| -q * y + v).collect();
                    let (lo, _, e1) = refine_argmin(&grid, &lo_vals, |y| k * y + f(y), lower, upper);
                    let (hi, _, e2) = refine_argmin(&grid, &hi_vals, |y| -q * y + f(y), lower, upper);
                    if e1 || e2 {
                        warnings.push(format!("optimal band at t = {t} touches the bounds ({lo}, {hi})"));
                    }
                    let tol = 1e-6 * (upper - lower);
                    if lo > hi + tol {
                        return Err(Error::numerical(format!("optimal band at t = {t} is disordered ({lo}, {hi})")));
                    }
                    (lo.min(hi), hi.max(lo))
                }
            };
            bands[t][0] = lo;
            bands[t][1] = hi;
            next = Some((lo, hi, f(lo), f(hi)));
            f_all[t] = fv;
        }
        let (lo, hi, f_lo, f_hi) = next.expect("horizon is positive");
        let v0 = BandValue { grid: &grid, f: &f_all[0], lo, hi, f_lo, f_hi, k, q };
        let value = (0..cfg.quadrature).map(|j| v0.at(self.init_state((j as f64 + 0.5) * inv_q))).sum::<f64>() * inv_q;
        Ok(CashDpSolution { theta: PolicyParams::new(Layout::CashBalance, bands), value, grid, f: f_all, warnings })
    }

    pub fn dp_oracle(&self, cfg: GridConfig) -> Result<CashDpSolution> {
        let sol = self.recursion(None, cfg)?;
        for w in &sol.warnings {
            log::warn!("GridBoundaryWarning: {w}");
        }
        Ok(sol)
    }

    pub fn grid_cost(&self, theta: &PolicyParams, cfg: GridConfig) -> Result<f64> {
        Ok(self.recursion(Some(theta), cfg)?.value)
    }

    fn rate(&self) -> f64 {
        let hb = self.params.holding.iter().chain(&self.params.backlog).copied().fold(0.0, f64::max);
        self.params.order_cost + self.params.refund.abs() + hb
    }

    /// `2 (k + |q| + max_t max(h_t, b_t)) T`.
    pub fn gradient_bound(&self) -> f64 {
        2.0 * self.rate() * self.horizon as f64
    }

    pub fn m_g(&self) -> f64 {
        self.l_d / self.alpha_d
    }

    /// `mu_l = mu_D^3 alpha_D^8 / (16 e L_D^2 (k + |q| + max(h, b))^2 T^4)`.
    pub fn kl_constant(&self) -> f64 {
        let t = self.horizon as f64;
        self.mu_d.powi(3) * self.alpha_d.powi(8) / (16.0 * E * self.l_d.powi(2) * self.rate().powi(2) * t.powi(4))
    }

    /// Both sides of the sequential decomposition inequality, `t < k`
    /// 0-based, on `n` common paths.
    pub fn seq_decomposition(
        &self,
        theta: &PolicyParams,
        dp: &CashDpSolution,
        t: usize,
        k: usize,
        n: usize,
        seed: u64,
    ) -> Result<SeqDecompEstimate> {
        if !(t < k && k < self.horizon) {
            return Err(Error::InvalidArgument(format!("need t < k < T, got t = {t}, k = {k}")));
        }
        if n == 0 {
            return Err(Error::InvalidArgument("need at least one path".into()));
        }
        self.check_feasible(theta)?;
        let alpha = theta.splice_tail(&dp.theta, k + 1);
        let beta = theta.splice_tail(&dp.theta, k);
        let (kc, qc) = (self.params.order_cost, self.params.refund);
        let q_star = |band: &DMatrix<f64>, s: f64| {
            let y = s.max(band[0]).min(band[1]);
            transaction_cost(kc, qc, y, s) + dp.grid.interp(&dp.f[k], y)
        };
        let parts = chunked(n, seed, |rng, count| {
            let (mut init, mut per) = (Vec::new(), Vec::new());
            let mut sa = vec![0.0; self.horizon];
            let mut sb = vec![0.0; self.horizon];
            let mut ga = vec![0.0; 2 * self.horizon];
            let mut gb = vec![0.0; 2 * self.horizon];
            let mut lhs = VecMoments::new(2);
            let mut rhs = Moments::default();
            for _ in 0..count {
                draw_path(self, rng, &mut init, &mut per);
                self.forward(&alpha, &init, &per, &mut sa);
                self.forward(&beta, &init, &per, &mut sb);
                ga.iter_mut().chain(gb.iter_mut()).for_each(|v| *v = 0.0);
                self.backward(&alpha, &sa, &mut ga);
                self.backward(&beta, &sb, &mut gb);
                lhs.push(&[ga[2 * t] - gb[2 * t], ga[2 * t + 1] - gb[2 * t + 1]]);
                rhs.push(q_star(&theta.blocks[k], sa[k]) - q_star(&dp.theta.blocks[k], sa[k]));
            }
            (lhs, rhs)
        });
        let mut lhs = VecMoments::new(2);
        let mut rhs = Moments::default();
        for (l, r) in &parts {
            lhs.merge(l);
            rhs.merge(r);
        }
        let mg = self.m_g();
        Ok(SeqDecompEstimate {
            lhs: lhs.mean.iter().map(|v| v * v).sum::<f64>().sqrt(),
            lhs_stderr: lhs.stderr().iter().map(|v| v * v).sum::<f64>().sqrt(),
            rhs: mg * rhs.mean,
            rhs_stderr: mg * rhs.stderr(),
        })
    }
}

impl Simulator for CashBalance {
    fn horizon(&self) -> usize {
        self.horizon
    }

    fn initial_draws(&self) -> usize {
        1
    }

    fn period_draws(&self) -> usize {
        1
    }

    fn check_policy(&self, theta: &PolicyParams) -> Result<()> {
        self.check_feasible(theta)
    }

    fn rollout(&self, theta: &PolicyParams, initial: &[f64], periods: &[f64], record: Option<&mut PathRecord>) -> f64 {
        let mut ss = vec![0.0; self.horizon];
        let total = self.forward(theta, initial, periods, &mut ss);
        if let Some(rec) = record {
            let (k, q) = (self.params.order_cost, self.params.refund);
            let mut y = 0.0;
            for t in 0..self.horizon {
                let b = &theta.blocks[t];
                y = ss[t].max(b[0]).min(b[1]);
                rec.states.push(vec![ss[t]]);
                rec.actions.push(vec![y - ss[t]]);
                rec.stage_costs.push(transaction_cost(k, q, y, ss[t]) + self.stage_loss(t, y).0);
            }
            rec.terminal_state = Some(vec![y - self.params.demand.quantile(periods[self.horizon - 1])]);
        }
        total
    }
}
