//! Entropy-regularized finite-horizon tabular MDP with direct (simplex)
//! policy parameterization.
//!
//! The regularized stage cost is `C_t(s, i) + lambda * KL(U || theta_t(s, .))`
//! with `U` uniform over the `n` actions. Each row of `theta_t` lives on the
//! simplex truncated at `p_min = lambda / (n * C_bar * T)`.

use std::f64::consts::E;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{categorical, PathRecord, Simulator};
use crate::optim::FeasibleSet;
use crate::params::{Layout, PolicyParams};
use crate::rng::stream_rng;

const ROW_SUM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularParams {
    /// Number of states.
    pub m: usize,
    /// Number of actions.
    pub n: usize,
    pub lambda: f64,
    /// Upper bound on every stage cost.
    pub c_bar: f64,
    /// `cost[t][s][i]`.
    pub cost: Vec<Vec<Vec<f64>>>,
    /// `transition[t][s][i][s']`.
    pub transition: Vec<Vec<Vec<Vec<f64>>>>,
    pub rho0: Vec<f64>,
}

impl TabularParams {
    /// Random instance: costs uniform on `[0, cost_scale * c_bar]`, transition
    /// rows and `rho0` drawn from a flat Dirichlet.
    pub fn random(m: usize, n: usize, horizon: usize, lambda: f64, c_bar: f64, cost_scale: f64, seed: u64) -> Self {
        let mut rng = stream_rng(seed, 0x7AB);
        let mut dirichlet = |k: usize| {
            let g: Vec<f64> = (0..k).map(|_| rng.sample::<f64, _>(Exp1)).collect();
            let s: f64 = g.iter().sum();
            g.into_iter().map(|x| x / s).collect::<Vec<f64>>()
        };
        let transition =
            (0..horizon).map(|_| (0..m).map(|_| (0..n).map(|_| dirichlet(m)).collect()).collect()).collect();
        let rho0 = dirichlet(m);
        let mut rng = stream_rng(seed, 0x7AC);
        let cost = (0..horizon)
            .map(|_| (0..m).map(|_| (0..n).map(|_| rng.random::<f64>() * cost_scale * c_bar).collect()).collect())
            .collect();
        TabularParams { m, n, lambda, c_bar, cost, transition, rho0 }
    }
}

/// Value tables of one policy.
#[derive(Debug, Clone)]
pub struct TabularValues {
    /// `v[t]` for `t = 0..=T`, with `v[T] = 0`.
    pub v: Vec<DVector<f64>>,
    /// `q[t][(s, i)] = C_t(s, i) + sum_{s'} P_t(s'|s, i) v[t+1](s')`.
    pub q: Vec<DMatrix<f64>>,
    /// State occupancy `rho[t]`.
    pub rho: Vec<DVector<f64>>,
    pub objective: f64,
}

#[derive(Debug, Clone)]
pub struct TabularOptimum {
    pub theta: PolicyParams,
    pub value: f64,
    /// Optimal tables: `q[t]` built from `V*_{t+1}`.
    pub tables: TabularValues,
}

#[derive(Debug, Clone)]
pub struct TabularMdp {
    pub params: TabularParams,
    pub horizon: usize,
    pub p_min: f64,
    cost: Vec<DMatrix<f64>>,
    /// `trans[t][i]` is the `m x m` matrix `P_t(s' | s, i)` indexed `(s, s')`.
    trans: Vec<Vec<DMatrix<f64>>>,
    rho0: DVector<f64>,
}

impl TabularMdp {
    pub fn new(horizon: usize, params: TabularParams) -> Result<Self> {
        let (m, n) = (params.m, params.n);
        let bad = |msg: String| Err(Error::InvalidEnv(msg));
        if horizon == 0 || m == 0 || n == 0 {
            return bad("horizon, m and n must be positive".into());
        }
        if !(params.lambda > 0.0) || !(params.c_bar > 0.0) {
            return bad(format!("need lambda > 0 and c_bar > 0, got {} and {}", params.lambda, params.c_bar));
        }
        if params.cost.len() != horizon || params.transition.len() != horizon {
            return bad(format!("cost and transition tables must have {horizon} periods"));
        }
        if params.rho0.len() != m || !is_distribution(&params.rho0) {
            return bad("rho0 must be a distribution over the m states".into());
        }
        let mut cost = Vec::with_capacity(horizon);
        let mut trans = Vec::with_capacity(horizon);
        for t in 0..horizon {
            let c = &params.cost[t];
            if c.len() != m || c.iter().any(|row| row.len() != n) {
                return bad(format!("cost[{t}] must be {m} x {n}"));
            }
            if c.iter().flatten().any(|&x| !(0.0..=params.c_bar).contains(&x)) {
                return bad(format!("cost[{t}] has entries outside [0, c_bar]"));
            }
            cost.push(DMatrix::from_fn(m, n, |s, i| c[s][i]));
            let p = &params.transition[t];
            if p.len() != m || p.iter().any(|row| row.len() != n || row.iter().any(|d| d.len() != m)) {
                return bad(format!("transition[{t}] must be {m} x {n} x {m}"));
            }
            if p.iter().flatten().any(|d| !is_distribution(d)) {
                return bad(format!("transition[{t}] has a row that is not a distribution"));
            }
            trans.push((0..n).map(|i| DMatrix::from_fn(m, m, |s, s2| p[s][i][s2])).collect());
        }
        let p_min = params.lambda / (n as f64 * params.c_bar * horizon as f64);
        if n as f64 * p_min > 1.0 {
            return bad(format!("n * p_min = {} exceeds 1", n as f64 * p_min));
        }
        let rho0 = DVector::from_vec(params.rho0.clone());
        Ok(TabularMdp { params, horizon, p_min, cost, trans, rho0 })
    }

    pub fn m(&self) -> usize {
        self.params.m
    }

    pub fn n(&self) -> usize {
        self.params.n
    }

    pub fn feasible_sets(&self) -> Vec<FeasibleSet> {
        vec![FeasibleSet::TruncatedSimplex { n: self.n(), p_min: self.p_min }; self.horizon]
    }

    pub fn uniform_policy(&self) -> PolicyParams {
        let (m, n) = (self.m(), self.n());
        PolicyParams::new(Layout::Tabular, vec![DMatrix::from_element(m, n, 1.0 / n as f64); self.horizon])
    }

    /// `KL(U || p) = sum_i (1/n) ln((1/n) / p_i)`.
    pub fn regularizer(p: impl Iterator<Item = f64>, n: usize) -> f64 {
        let inv = 1.0 / n as f64;
        p.map(|pi| inv * (inv / pi).ln()).sum()
    }

    fn row_reg(&self, theta: &DMatrix<f64>, s: usize) -> f64 {
        Self::regularizer(theta.row(s).iter().copied(), self.n())
    }

    pub fn check_feasible(&self, theta: &PolicyParams) -> Result<()> {
        theta.check_shape(Layout::Tabular, self.horizon, self.m(), self.n())?;
        for (t, b) in theta.blocks.iter().enumerate() {
            for s in 0..self.m() {
                let row = b.row(s);
                if let Some(i) = row.iter().position(|&p| !(p >= self.p_min - 1e-12)) {
                    return Err(Error::InfeasiblePoint(format!(
                        "theta[{t}]({s}, {i}) = {} is below p_min = {}",
                        row[i], self.p_min
                    )));
                }
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > 1e-9 {
                    return Err(Error::InfeasiblePoint(format!("theta[{t}] row {s} sums to {sum}")));
                }
            }
        }
        Ok(())
    }

    /// `C_t + P_t v_next` as an `m x n` table.
    fn q_table(&self, t: usize, v_next: &DVector<f64>) -> DMatrix<f64> {
        let mut q = self.cost[t].clone();
        for i in 0..self.n() {
            let cont = &self.trans[t][i] * v_next;
            for s in 0..self.m() {
                q[(s, i)] += cont[s];
            }
        }
        q
    }

    fn occupancy(&self, theta: &PolicyParams) -> Vec<DVector<f64>> {
        let mut rho = Vec::with_capacity(self.horizon);
        let mut cur = self.rho0.clone();
        for t in 0..self.horizon {
            let mut next = DVector::zeros(self.m());
            for i in 0..self.n() {
                let weighted = cur.component_mul(&theta.blocks[t].column(i));
                next += self.trans[t][i].transpose() * weighted;
            }
            rho.push(cur);
            cur = next;
        }
        rho
    }

    /// Backward values and forward occupancies of `theta`.
    pub fn values(&self, theta: &PolicyParams) -> Result<TabularValues> {
        self.check_feasible(theta)?;
        let (m, lam) = (self.m(), self.params.lambda);
        let mut v = vec![DVector::zeros(m); self.horizon + 1];
        let mut q = vec![DMatrix::zeros(m, self.n()); self.horizon];
        for t in (0..self.horizon).rev() {
            q[t] = self.q_table(t, &v[t + 1]);
            let b = &theta.blocks[t];
            v[t] = DVector::from_fn(m, |s, _| b.row(s).dot(&q[t].row(s)) + lam * self.row_reg(b, s));
        }
        let rho = self.occupancy(theta);
        let objective = self.rho0.dot(&v[0]);
        Ok(TabularValues { v, q, rho, objective })
    }

    pub fn cost(&self, theta: &PolicyParams) -> Result<f64> {
        Ok(self.values(theta)?.objective)
    }

    /// Objective of any positive table, rows not required to sum to one.
    /// This is the smooth extension whose partial derivatives
    /// [`TabularMdp::gradient`] returns.
    pub fn extended_cost(&self, theta: &PolicyParams) -> Result<f64> {
        theta.check_shape(Layout::Tabular, self.horizon, self.m(), self.n())?;
        if theta.blocks.iter().any(|b| b.iter().any(|&p| !(p > 0.0))) {
            return Err(Error::InvalidPolicy("table entries must be positive".into()));
        }
        let mut v = DVector::zeros(self.m());
        for t in (0..self.horizon).rev() {
            let q = self.q_table(t, &v);
            let b = &theta.blocks[t];
            v = DVector::from_fn(self.m(), |s, _| b.row(s).dot(&q.row(s)) + self.params.lambda * self.row_reg(b, s));
        }
        Ok(self.rho0.dot(&v))
    }

    /// Exact policy gradient `rho_t(s) (-lambda / (n theta) + q_t(s, i))`.
    pub fn gradient(&self, theta: &PolicyParams) -> Result<PolicyParams> {
        let vals = self.values(theta)?;
        Ok(self.gradient_from(theta, &vals))
    }

    fn gradient_from(&self, theta: &PolicyParams, vals: &TabularValues) -> PolicyParams {
        let c = self.params.lambda / self.n() as f64;
        let blocks = (0..self.horizon)
            .map(|t| {
                DMatrix::from_fn(self.m(), self.n(), |s, i| {
                    vals.rho[t][s] * (-c / theta.blocks[t][(s, i)] + vals.q[t][(s, i)])
                })
            })
            .collect();
        PolicyParams::new(Layout::Tabular, blocks)
    }

    /// Minimizer of `lambda KL(U || p) + <p, q>` over the truncated simplex.
    ///
    /// Stationarity gives `p_i = max(p_min, lambda / (n (q_i - nu)))` for a
    /// scalar `nu < min q`; the row sum is increasing in `nu` and equals 1
    /// somewhere in `[min q - lambda, min q - lambda / n]`.
    pub fn solve_row(&self, q: &[f64]) -> Result<Vec<f64>> {
        let n = q.len();
        let (lam, p_min) = (self.params.lambda, self.p_min);
        let free_mass = 1.0 - n as f64 * p_min;
        if free_mass <= 1e-15 {
            return Ok(vec![1.0 / n as f64; n]);
        }
        let qmin = q.iter().copied().fold(f64::INFINITY, f64::min);
        let row = |nu: f64| -> Vec<f64> {
            q.iter().map(|&qi| if qi - nu <= 0.0 { 1.0 } else { p_min.max(lam / (n as f64 * (qi - nu))) }).collect()
        };
        let (mut lo, mut hi) = (qmin - lam, qmin - lam / n as f64);
        let mut iters = 0;
        while hi - lo > 1e-15 * (1.0 + qmin.abs()) {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if row(mid).iter().sum::<f64>() < 1.0 {
                lo = mid;
            } else {
                hi = mid;
            }
            iters += 1;
            if iters > 400 {
                return Err(Error::numerical("simplex multiplier bisection did not converge"));
            }
        }
        let mut p = row(0.5 * (lo + hi));
        let residual = 1.0 - p.iter().sum::<f64>();
        let free: f64 = p.iter().filter(|&&x| x > p_min).sum();
        if free > 0.0 {
            for x in p.iter_mut().filter(|x| **x > p_min) {
                *x += residual * *x / free;
            }
        }
        Ok(p)
    }

    /// Backward induction over the truncated simplex.
    pub fn dp_optimal(&self) -> Result<TabularOptimum> {
        let (m, n, lam) = (self.m(), self.n(), self.params.lambda);
        let mut v = vec![DVector::zeros(m); self.horizon + 1];
        let mut q = vec![DMatrix::zeros(m, n); self.horizon];
        let mut blocks = vec![DMatrix::zeros(m, n); self.horizon];
        for t in (0..self.horizon).rev() {
            q[t] = self.q_table(t, &v[t + 1]);
            for s in 0..m {
                let qs: Vec<f64> = q[t].row(s).iter().copied().collect();
                let p = self.solve_row(&qs)?;
                for i in 0..n {
                    blocks[t][(s, i)] = p[i];
                }
                v[t][s] =
                    p.iter().zip(&qs).map(|(a, b)| a * b).sum::<f64>() + lam * Self::regularizer(p.iter().copied(), n);
            }
        }
        let theta = PolicyParams::new(Layout::Tabular, blocks);
        let rho = self.occupancy(&theta);
        let value = self.rho0.dot(&v[0]);
        Ok(TabularOptimum { theta, value, tables: TabularValues { v, q, rho, objective: value } })
    }

    /// Optimal Q-value of playing row distribution `p` at `(t, s)` and
    /// following the optimal policy afterwards.
    pub fn q_star(&self, opt: &TabularOptimum, t: usize, s: usize, p: impl Iterator<Item = f64> + Clone) -> f64 {
        let lin: f64 = p.clone().zip(opt.tables.q[t].row(s).iter()).map(|(a, b)| a * b).sum();
        lin + self.params.lambda * Self::regularizer(p, self.n())
    }

    /// Bound `G = T C_bar + lambda / (n p_min) + lambda T ln(1 / (n p_min))`
    /// on the gradient norm.
    pub fn gradient_bound(&self) -> f64 {
        let (t, n, lam) = (self.horizon as f64, self.n() as f64, self.params.lambda);
        t * self.params.c_bar + lam / (n * self.p_min) + lam * t * (1.0 / (n * self.p_min)).ln()
    }

    /// Per-period KL constant of the expected optimal Q-value function.
    pub fn mu_q(&self) -> f64 {
        self.params.lambda / self.n() as f64
    }

    /// Sequential-decomposition constant `1 / p_min`.
    pub fn m_g(&self) -> f64 {
        1.0 / self.p_min
    }

    /// `mu_l = lambda^3 p_min^2 / (e n^3 T^2 G^2)`.
    pub fn kl_constant(&self) -> f64 {
        let (t, n, lam) = (self.horizon as f64, self.n() as f64, self.params.lambda);
        let g = self.gradient_bound();
        lam.powi(3) * self.p_min.powi(2) / (E * n.powi(3) * t * t * g * g)
    }

    /// Both sides of the sequential decomposition inequality for periods
    /// `t < k` (0-based), computed exactly.
    pub fn seq_decomposition(
        &self,
        theta: &PolicyParams,
        opt: &TabularOptimum,
        t: usize,
        k: usize,
    ) -> Result<(f64, f64)> {
        if !(t < k && k < self.horizon) {
            return Err(Error::InvalidArgument(format!("need t < k < T, got t = {t}, k = {k}")));
        }
        let alpha = theta.splice_tail(&opt.theta, k + 1);
        let beta = theta.splice_tail(&opt.theta, k);
        let ga = self.gradient(&alpha)?;
        let gb = self.gradient(&beta)?;
        let lhs = (&ga.blocks[t] - &gb.blocks[t]).norm();
        let rho_k = &self.occupancy(theta)[k];
        let mut gap = 0.0;
        for s in 0..self.m() {
            let here = self.q_star(opt, k, s, theta.blocks[k].row(s).iter().copied());
            let best = self.q_star(opt, k, s, opt.theta.blocks[k].row(s).iter().copied());
            gap += rho_k[s] * (here - best);
        }
        Ok((lhs, self.m_g() * gap))
    }
}

fn is_distribution(p: &[f64]) -> bool {
    p.iter().all(|&x| x >= 0.0) && (p.iter().sum::<f64>() - 1.0).abs() <= ROW_SUM_TOL * p.len().max(1) as f64 * 10.0
}

impl Simulator for TabularMdp {
    fn horizon(&self) -> usize {
        self.horizon
    }

    fn initial_draws(&self) -> usize {
        1
    }

    fn period_draws(&self) -> usize {
        2
    }

    fn check_policy(&self, theta: &PolicyParams) -> Result<()> {
        self.check_feasible(theta)
    }

    fn rollout(
        &self,
        theta: &PolicyParams,
        initial: &[f64],
        periods: &[f64],
        mut record: Option<&mut PathRecord>,
    ) -> f64 {
        let lam = self.params.lambda;
        let mut s = categorical(self.rho0.iter().copied(), initial[0]);
        let mut total = 0.0;
        for t in 0..self.horizon {
            let b = &theta.blocks[t];
            let i = categorical(b.row(s).iter().copied(), periods[2 * t]);
            let c = self.cost[t][(s, i)] + lam * self.row_reg(b, s);
            let next = categorical(self.trans[t][i].row(s).iter().copied(), periods[2 * t + 1]);
            if let Some(rec) = record.as_deref_mut() {
                rec.states.push(vec![s as f64]);
                rec.actions.push(vec![i as f64]);
                rec.stage_costs.push(c);
            }
            total += c;
            s = next;
        }
        if let Some(rec) = record {
            rec.terminal_state = Some(vec![s as f64]);
        }
        total
    }
}
