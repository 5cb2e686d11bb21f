//! Multi-period inventory control with Markov-modulated demand, full
//! backlogging and state-dependent base-stock policies
//! `y_t = max(x_t, theta_{t, i_t})` with `theta_{t,i} in [0, B]`.
//!
//! The recorded stage cost is the conditional expectation `L_t(y_t | i_t)`
//! given the order-up-to level; the realized demand only drives the next
//! inventory position. This keeps every path cost differentiable in `theta`
//! and leaves `l(theta)` unchanged.

use std::f64::consts::E;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::demand::Demand;
use super::grid::{refine_argmin, Grid, GridConfig};
use super::{IpaEstimate, SeqDecompEstimate};
use crate::error::{Error, Result};
use crate::mdp::{categorical, chunked, draw_path, CostEstimate, PathRecord, Simulator};
use crate::optim::FeasibleSet;
use crate::params::{Layout, PolicyParams};
use crate::stats::{Moments, VecMoments};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InventoryParams {
    /// World-state transition matrix `p(j | i)`, row-major.
    pub transition: Vec<Vec<f64>>,
    /// Demand distribution in each world state.
    pub demand: Vec<Demand>,
    /// Holding cost `h_t` per period.
    pub holding: Vec<f64>,
    /// Backlog cost `b_t` per period.
    pub backlog: Vec<f64>,
    /// Upper bound `B` on base-stock levels.
    pub cap: f64,
    /// Initial inventory is uniform on `[init_lo, init_hi]`.
    pub init_lo: f64,
    pub init_hi: f64,
}

#[derive(Debug, Clone)]
pub struct DpSolution {
    pub theta: PolicyParams,
    /// `E_rho[V*_1]` from the grid recursion.
    pub value: f64,
    pub grid: Grid,
    /// `f[t][i][g]`: optimal Q-value of post-decision level `grid.point(g)`.
    pub f: Vec<Vec<Vec<f64>>>,
    /// `v[t][i][g]`: optimal value of state `grid.point(g)`.
    pub v: Vec<Vec<Vec<f64>>>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct Inventory {
    pub params: InventoryParams,
    pub horizon: usize,
    /// Stationary distribution of the world-state chain.
    pub nu: Vec<f64>,
    /// Lipschitz constant of every demand CDF.
    pub l_d: f64,
    /// `min_i P(D > B | i)`.
    pub alpha_d: f64,
    /// Smallest demand density on `[0, B]`.
    pub mu_d: f64,
    /// Lipschitz constant of the initial-state CDF.
    pub l_rho: f64,
}

/// Stationary distribution of a row-stochastic matrix.
pub fn stationary(p: &[Vec<f64>]) -> Result<Vec<f64>> {
    let k = p.len();
    let mut a = DMatrix::from_fn(k, k, |r, c| if r == c { 1.0 } else { 0.0 } - p[c][r]);
    let mut rhs = DVector::zeros(k);
    for c in 0..k {
        a[(k - 1, c)] = 1.0;
    }
    rhs[k - 1] = 1.0;
    let nu =
        a.lu().solve(&rhs).ok_or_else(|| Error::InvalidEnv("world-state chain has no unique stationary law".into()))?;
    Ok(nu.iter().copied().collect())
}

impl Inventory {
    pub fn new(horizon: usize, params: InventoryParams) -> Result<Self> {
        let bad = |msg: String| Err(Error::InvalidEnv(msg));
        let k = params.demand.len();
        if horizon == 0 || k == 0 {
            return bad("horizon and the number of world states must be positive".into());
        }
        if params.transition.len() != k || params.transition.iter().any(|r| r.len() != k) {
            return bad(format!("transition must be {k} x {k}"));
        }
        for (i, row) in params.transition.iter().enumerate() {
            if row.iter().any(|&x| x < 0.0) || (row.iter().sum::<f64>() - 1.0).abs() > 1e-10 {
                return bad(format!("transition row {i} is not a distribution"));
            }
        }
        if params.holding.len() != horizon || params.backlog.len() != horizon {
            return bad(format!("holding and backlog need {horizon} entries"));
        }
        if params.holding.iter().chain(&params.backlog).any(|&c| !(c >= 0.0)) {
            return bad("holding and backlog costs must be nonnegative".into());
        }
        if !(params.cap > 0.0) {
            return bad("cap B must be positive".into());
        }
        if !(params.init_lo < params.init_hi) || params.init_hi > params.cap {
            return bad("initial inventory needs init_lo < init_hi <= B".into());
        }
        for d in &params.demand {
            d.validate()?;
            if d.support().0 < 0.0 {
                return bad(format!("demand {d:?} takes negative values"));
            }
        }
        let nu = stationary(&params.transition)?;
        for j in 0..k {
            let back: f64 = (0..k).map(|i| nu[i] * params.transition[i][j]).sum();
            if (back - nu[j]).abs() > 1e-10 || nu[j] < 0.0 {
                return bad("stationary distribution check failed".into());
            }
        }
        let l_d = params.demand.iter().map(Demand::max_density).fold(0.0, f64::max);
        let alpha_d = params.demand.iter().map(|d| 1.0 - d.cdf(params.cap)).fold(f64::INFINITY, f64::min);
        let mu_d = params.demand.iter().map(|d| d.min_density_on(0.0, params.cap)).fold(f64::INFINITY, f64::min);
        if !(alpha_d > 0.0) {
            return bad("every demand law must put positive mass above B".into());
        }
        if !(mu_d > 0.0) {
            return bad("demand densities must be bounded below on [0, B]".into());
        }
        let l_rho = 1.0 / (params.init_hi - params.init_lo);
        let env = Inventory { params, horizon, nu, l_d, alpha_d, mu_d, l_rho };
        if env.initial_coverage() < env.alpha_d {
            log::warn!(
                "P(x_1 <= 0) = {} is below alpha_D = {}; first-period levels near 0 have a vanishing gradient",
                env.initial_coverage(),
                env.alpha_d
            );
        }
        Ok(env)
    }

    /// `P(x_1 <= 0)`. Every feasible first-period level binds with at
    /// least this probability; the KL constant presumes it is at least
    /// `alpha_D`, as it is automatically for later periods.
    pub fn initial_coverage(&self) -> f64 {
        ((0.0 - self.params.init_lo) / (self.params.init_hi - self.params.init_lo)).clamp(0.0, 1.0)
    }

    pub fn world_states(&self) -> usize {
        self.params.demand.len()
    }

    pub fn feasible_sets(&self) -> Vec<FeasibleSet> {
        vec![FeasibleSet::uniform_box(self.world_states(), 0.0, self.params.cap); self.horizon]
    }

    pub fn constant_policy(&self, level: f64) -> PolicyParams {
        PolicyParams::new(Layout::Inventory, vec![DMatrix::from_element(self.world_states(), 1, level); self.horizon])
    }

    pub fn check_feasible(&self, theta: &PolicyParams) -> Result<()> {
        theta.check_shape(Layout::Inventory, self.horizon, self.world_states(), 1)?;
        let tol = 1e-9 * (1.0 + self.params.cap);
        for (t, b) in theta.blocks.iter().enumerate() {
            if let Some(i) = b.iter().position(|&x| !(x >= -tol && x <= self.params.cap + tol)) {
                return Err(Error::InfeasiblePoint(format!("theta[{t}][{i}] = {} outside [0, B]", b[i])));
            }
        }
        Ok(())
    }

    /// `L_t(y | i)` and its derivative.
    pub fn stage_cost(&self, t: usize, y: f64, i: usize) -> (f64, f64) {
        let (h, b) = (self.params.holding[t], self.params.backlog[t]);
        let d = &self.params.demand[i];
        (d.newsvendor_loss(y, h, b), d.newsvendor_slope(y, h, b))
    }

    fn init_state(&self, u: f64) -> f64 {
        self.params.init_lo + u * (self.params.init_hi - self.params.init_lo)
    }

    /// One path: fills `xs`/`is` with pre-decision states and world states
    /// and returns the path cost.
    fn forward(&self, theta: &PolicyParams, initial: &[f64], periods: &[f64], xs: &mut [f64], is: &mut [usize]) -> f64 {
        let mut x = self.init_state(initial[0]);
        let mut i = categorical(self.nu.iter().copied(), initial[1]);
        let mut total = 0.0;
        for t in 0..self.horizon {
            xs[t] = x;
            is[t] = i;
            let y = x.max(theta.blocks[t][i]);
            total += self.stage_cost(t, y, i).0;
            let d = self.params.demand[i].quantile(periods[2 * t]);
            i = categorical(self.params.transition[i].iter().copied(), periods[2 * t + 1]);
            x = y - d;
        }
        total
    }

    /// Pathwise derivative along a recorded path, accumulated into `grad`
    /// (flat, index `t * |I| + i`).
    fn backward(&self, theta: &PolicyParams, xs: &[f64], is: &[usize], grad: &mut [f64]) {
        let k = self.world_states();
        let mut w = 0.0;
        for t in (0..self.horizon).rev() {
            let (x, i) = (xs[t], is[t]);
            let level = theta.blocks[t][i];
            if level >= x {
                grad[t * k + i] += self.stage_cost(t, level, i).1 + w;
                w = 0.0;
            } else {
                w += self.stage_cost(t, x, i).1;
            }
        }
    }

    /// IPA estimate of the policy gradient from `n` paths.
    pub fn ipa(&self, theta: &PolicyParams, n: usize, seed: u64) -> Result<IpaEstimate> {
        if n == 0 {
            return Err(Error::InvalidArgument("IPA needs at least one path".into()));
        }
        self.check_feasible(theta)?;
        let dim = self.horizon * self.world_states();
        let parts = chunked(n, seed, |rng, count| {
            let (mut init, mut per) = (Vec::new(), Vec::new());
            let mut xs = vec![0.0; self.horizon];
            let mut is = vec![0; self.horizon];
            let mut g = vec![0.0; dim];
            let mut gm = VecMoments::new(dim);
            let mut cm = Moments::default();
            for _ in 0..count {
                draw_path(self, rng, &mut init, &mut per);
                cm.push(self.forward(theta, &init, &per, &mut xs, &mut is));
                g.iter_mut().for_each(|v| *v = 0.0);
                self.backward(theta, &xs, &is, &mut g);
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

    fn grid(&self, cfg: GridConfig) -> Grid {
        Grid::new(self.params.init_lo.min(0.0), self.params.cap.max(self.params.init_hi), cfg.points)
    }

    /// Backward recursion on the grid. With `policy = Some(theta)` it
    /// evaluates `theta`; otherwise it optimizes each level over `[0, B]`.
    fn recursion(&self, policy: Option<&PolicyParams>, cfg: GridConfig) -> Result<DpSolution> {
        if cfg.points < 2 || cfg.quadrature == 0 {
            return Err(Error::InvalidArgument("grid needs at least 2 points and 1 quadrature node".into()));
        }
        if let Some(theta) = policy {
            self.check_feasible(theta)?;
        }
        let k = self.world_states();
        let grid = self.grid(cfg);
        let xs = grid.points();
        let nodes: Vec<Vec<f64>> = self.params.demand.iter().map(|d| d.quadrature(cfg.quadrature)).collect();
        let inv_q = 1.0 / cfg.quadrature as f64;
        let mut v_next = vec![vec![0.0; grid.n]; k];
        let mut f_all = vec![Vec::new(); self.horizon];
        let mut v_all = vec![Vec::new(); self.horizon];
        let mut levels = vec![DMatrix::zeros(k, 1); self.horizon];
        let mut warnings = Vec::new();
        for t in (0..self.horizon).rev() {
            let mut f_t = Vec::with_capacity(k);
            let mut v_t = Vec::with_capacity(k);
            for i in 0..k {
                let cont: Vec<f64> =
                    (0..grid.n).map(|g| (0..k).map(|j| self.params.transition[i][j] * v_next[j][g]).sum()).collect();
                let f = |y: f64| -> f64 {
                    let tail: f64 = nodes[i].iter().map(|d| grid.interp(&cont, y - d)).sum();
                    self.stage_cost(t, y, i).0 + tail * inv_q
                };
                let fv: Vec<f64> = xs.iter().map(|&y| f(y)).collect();
                let level = match policy {
                    Some(theta) => theta.blocks[t][i].clamp(0.0, self.params.cap),
                    None => {
                        let (x, _, edge) = refine_argmin(&grid, &fv, f, 0.0, self.params.cap);
                        if edge {
                            warnings.push(format!("optimal level for t = {t}, i = {i} sits at the boundary ({x})"));
                        }
                        x
                    }
                };
                levels[t][i] = level;
                let f_level = f(level);
                v_t.push(xs.iter().zip(&fv).map(|(&x, &fx)| if x >= level { fx } else { f_level }).collect());
                f_t.push(fv);
            }
            v_next = v_t.clone();
            f_all[t] = f_t;
            v_all[t] = v_t;
        }
        let x1: Vec<f64> = (0..cfg.quadrature).map(|q| self.init_state((q as f64 + 0.5) * inv_q)).collect();
        let value: f64 =
            (0..k).map(|i| self.nu[i] * x1.iter().map(|&x| grid.interp(&v_all[0][i], x)).sum::<f64>() * inv_q).sum();
        let theta = PolicyParams::new(Layout::Inventory, levels);
        Ok(DpSolution { theta, value, grid, f: f_all, v: v_all, warnings })
    }

    /// Grid DP for the optimal state-dependent base-stock levels.
    pub fn dp_oracle(&self, cfg: GridConfig) -> Result<DpSolution> {
        let sol = self.recursion(None, cfg)?;
        for w in &sol.warnings {
            log::warn!("GridBoundaryWarning: {w}");
        }
        Ok(sol)
    }

    /// Near-exact `l(theta)` by grid policy evaluation.
    pub fn grid_cost(&self, theta: &PolicyParams, cfg: GridConfig) -> Result<f64> {
        Ok(self.recursion(Some(theta), cfg)?.value)
    }

    pub fn max_cost_rate(&self) -> f64 {
        self.params.holding.iter().chain(&self.params.backlog).copied().fold(0.0, f64::max)
    }

    /// Gradient-norm bound `max_t max(h_t, b_t) T`.
    pub fn gradient_bound(&self) -> f64 {
        self.max_cost_rate() * self.horizon as f64
    }

    pub fn m_g(&self) -> f64 {
        self.l_d / self.alpha_d
    }

    pub fn mu_q(&self) -> f64 {
        let nu_min = self.nu.iter().copied().fold(f64::INFINITY, f64::min);
        self.mu_d * self.alpha_d.powi(2) * nu_min
    }

    /// `mu_l = mu_D^3 alpha_D^8 (min nu)^3 / (e L_D^2 max(h, b)^2 T^4)`.
    pub fn kl_constant(&self) -> f64 {
        let nu_min = self.nu.iter().copied().fold(f64::INFINITY, f64::min);
        let t = self.horizon as f64;
        self.mu_d.powi(3) * self.alpha_d.powi(8) * nu_min.powi(3)
            / (E * self.l_d.powi(2) * self.max_cost_rate().powi(2) * t.powi(4))
    }

    /// Both sides of the sequential decomposition inequality for periods
    /// `t < k` (0-based), estimated on `n` common paths.
    pub fn seq_decomposition(
        &self,
        theta: &PolicyParams,
        dp: &DpSolution,
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
        let nw = self.world_states();
        let parts = chunked(n, seed, |rng, count| {
            let (mut init, mut per) = (Vec::new(), Vec::new());
            let (mut xa, mut ia) = (vec![0.0; self.horizon], vec![0; self.horizon]);
            let (mut xb, mut ib) = (vec![0.0; self.horizon], vec![0; self.horizon]);
            let mut ga = vec![0.0; self.horizon * nw];
            let mut gb = vec![0.0; self.horizon * nw];
            let mut lhs = VecMoments::new(nw);
            let mut rhs = Moments::default();
            for _ in 0..count {
                draw_path(self, rng, &mut init, &mut per);
                self.forward(&alpha, &init, &per, &mut xa, &mut ia);
                self.forward(&beta, &init, &per, &mut xb, &mut ib);
                ga.iter_mut().chain(gb.iter_mut()).for_each(|v| *v = 0.0);
                self.backward(&alpha, &xa, &ia, &mut ga);
                self.backward(&beta, &xb, &ib, &mut gb);
                let d: Vec<f64> = (0..nw).map(|i| ga[t * nw + i] - gb[t * nw + i]).collect();
                lhs.push(&d);
                let (x, i) = (xa[k], ia[k]);
                let fk = &dp.f[k][i];
                let here = dp.grid.interp(fk, x.max(theta.blocks[k][i]));
                let best = dp.grid.interp(fk, x.max(dp.theta.blocks[k][i]));
                rhs.push(here - best);
            }
            (lhs, rhs)
        });
        let mut lhs = VecMoments::new(nw);
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

impl Simulator for Inventory {
    fn horizon(&self) -> usize {
        self.horizon
    }

    fn initial_draws(&self) -> usize {
        2
    }

    fn period_draws(&self) -> usize {
        2
    }

    fn check_policy(&self, theta: &PolicyParams) -> Result<()> {
        self.check_feasible(theta)
    }

    fn rollout(&self, theta: &PolicyParams, initial: &[f64], periods: &[f64], record: Option<&mut PathRecord>) -> f64 {
        let mut xs = vec![0.0; self.horizon];
        let mut is = vec![0; self.horizon];
        let total = self.forward(theta, initial, periods, &mut xs, &mut is);
        if let Some(rec) = record {
            for t in 0..self.horizon {
                let y = xs[t].max(theta.blocks[t][is[t]]);
                rec.states.push(vec![xs[t], is[t] as f64]);
                rec.actions.push(vec![y - xs[t]]);
                rec.stage_costs.push(self.stage_cost(t, y, is[t]).0);
            }
            let last = self.horizon - 1;
            let y = xs[last].max(theta.blocks[last][is[last]]);
            let d = self.params.demand[is[last]].quantile(periods[2 * last]);
            let i = categorical(self.params.transition[is[last]].iter().copied(), periods[2 * last + 1]);
            rec.terminal_state = Some(vec![y - d, i as f64]);
        }
        total
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{mc_cost, sample_trajectory};
    use crate::optim::sample_params;
    use crate::rng::stream_rng;

    fn single(horizon: usize, h: f64, b: f64) -> Inventory {
        Inventory::new(
            horizon,
            InventoryParams {
                transition: vec![vec![1.0]],
                demand: vec![Demand::Uniform { a: 0.0, b: 12.0 }],
                holding: vec![h; horizon],
                backlog: vec![b; horizon],
                cap: 10.0,
                init_lo: 0.0,
                init_hi: 10.0,
            },
        )
        .unwrap()
    }

    #[test]
    fn validation() {
        let mut p = single(1, 1.0, 1.0).params;
        p.demand = vec![Demand::Uniform { a: 0.0, b: 9.0 }];
        assert!(Inventory::new(1, p.clone()).is_err());
        p.demand = vec![Demand::Uniform { a: 2.0, b: 14.0 }];
        assert!(Inventory::new(1, p).is_err());
        let env = crate::desk::inventory_desk();
        assert!((env.nu.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_demand_order_up_to() {
        // Point demand at zero is outside the admissible families; use a
        // draw at the bottom of the support to emulate it.
        let env = single(4, 1.0, 1.0);
        let theta = env.constant_policy(5.0);
        let periods = vec![0.0, 0.5, 0.0, 0.5, 0.0, 0.5, 0.0, 0.5];
        let mut rec = PathRecord::default();
        env.rollout(&theta, &[0.0, 0.5], &periods, Some(&mut rec));
        for t in 1..4 {
            assert_eq!(rec.states[t][0], 5.0);
        }
    }

    #[test]
    fn state_stays_below_cap() {
        let env = crate::desk::inventory_desk();
        let sets = env.feasible_sets();
        let mut rng = stream_rng(5, 0);
        for s in 0..200 {
            let theta = sample_params(&sets, &env.constant_policy(0.0), &mut rng);
            let traj = sample_trajectory(&env, &theta, s).unwrap();
            assert!(traj.states.iter().all(|st| st[0] <= env.params.cap));
        }
    }

    #[test]
    fn one_period_gradient_closed_form() {
        let env = single(1, 1.0, 2.0);
        let theta = env.constant_policy(6.0);
        let est = env.ipa(&theta, 200_000, 3).unwrap();
        // P(x_1 <= 6) L'(6) with x_1 ~ U[0, 10], L'(6) = 1 * 0.5 - 2 * 0.5.
        let exact = 0.6 * (0.5 - 1.0);
        let g = est.gradient.blocks[0][0];
        assert!((g - exact).abs() <= 4.0 * est.stderr.blocks[0][0], "{g} vs {exact}");
    }

    #[test]
    fn newsvendor_and_free_holding() {
        let env = single(1, 1.0, 3.0);
        let dp = env.dp_oracle(GridConfig::ORACLE).unwrap();
        assert!((dp.theta.blocks[0][0] - 9.0).abs() < 1e-4);
        let env = single(3, 0.0, 1.0);
        let dp = env.dp_oracle(GridConfig::EVAL).unwrap();
        for t in 0..3 {
            assert!((dp.theta.blocks[t][0] - 10.0).abs() < 1e-6);
        }
        assert!(!dp.warnings.is_empty());
    }

    #[test]
    fn grid_evaluation_agrees_with_simulation() {
        let env = crate::desk::inventory_desk();
        let theta = sample_params(&env.feasible_sets(), &env.constant_policy(0.0), &mut stream_rng(9, 9));
        let grid = env.grid_cost(&theta, GridConfig::EVAL).unwrap();
        let mc = mc_cost(&env, &theta, 200_000, 4).unwrap();
        assert!((grid - mc.mean).abs() <= 4.0 * mc.stderr, "{grid} vs {} ({})", mc.mean, mc.stderr);
    }

    #[test]
    fn gradient_norm_bound() {
        let env = crate::desk::inventory_desk();
        let mut rng = stream_rng(1, 2);
        for s in 0..20 {
            let theta = sample_params(&env.feasible_sets(), &env.constant_policy(0.0), &mut rng);
            let est = env.ipa(&theta, 2000, s).unwrap();
            assert!(est.gradient.norm() <= env.gradient_bound());
        }
    }

    #[test]
    fn kl_constant_formula() {
        let env = crate::desk::inventory_desk();
        let nu_min = env.nu.iter().copied().fold(1.0, f64::min);
        let by_hand = env.mu_d.powi(3) * env.alpha_d.powi(8) * nu_min.powi(3)
            / (E * env.l_d * env.l_d * env.max_cost_rate().powi(2) * 256.0);
        assert!((env.kl_constant() - by_hand).abs() <= 1e-15 * by_hand);
        assert!(env.kl_constant() > 0.0);
    }

    #[test]
    fn kl_constant_shrinks_with_more_world_states() {
        let make = |k: usize| {
            Inventory::new(
                2,
                InventoryParams {
                    transition: vec![vec![1.0 / k as f64; k]; k],
                    demand: vec![Demand::Uniform { a: 0.0, b: 12.0 }; k],
                    holding: vec![1.0; 2],
                    backlog: vec![1.0; 2],
                    cap: 10.0,
                    init_lo: 0.0,
                    init_hi: 10.0,
                },
            )
            .unwrap()
            .kl_constant()
        };
        assert!(make(3) < make(2));
    }

    #[test]
    fn occupancy_surrogate() {
        let env = crate::desk::inventory_desk();
        let theta = sample_params(&env.feasible_sets(), &env.constant_policy(0.0), &mut stream_rng(3, 3));
        let n = 50_000;
        let k = env.world_states();
        let mut hits = vec![vec![0usize; k]; env.horizon];
        for s in 0..n {
            let traj = sample_trajectory(&env, &theta, 10_000 + s as u64).unwrap();
            for t in 0..env.horizon {
                let (x, i) = (traj.states[t][0], traj.states[t][1] as usize);
                if theta.blocks[t][i] >= x {
                    hits[t][i] += 1;
                }
            }
        }
        assert!(env.initial_coverage() >= env.alpha_d);
        for t in 0..env.horizon {
            for i in 0..k {
                let p = hits[t][i] as f64 / n as f64;
                let se = (p * (1.0 - p) / n as f64).sqrt();
                assert!(p >= env.alpha_d * env.nu[i] - 3.0 * se, "t={t} i={i} p={p}");
            }
        }
    }

    #[test]
    fn optimum_matches_simulation_and_dominates() {
        let env = crate::desk::inventory_desk();
        let dp = env.dp_oracle(GridConfig::EVAL).unwrap();
        let eval = env.grid_cost(&dp.theta, GridConfig::EVAL).unwrap();
        assert!((eval - dp.value).abs() < 1e-9);
        let mut rng = stream_rng(4, 4);
        for _ in 0..30 {
            let theta = sample_params(&env.feasible_sets(), &env.constant_policy(0.0), &mut rng);
            assert!(env.grid_cost(&theta, GridConfig::EVAL).unwrap() >= dp.value - 1e-9);
        }
    }
}
