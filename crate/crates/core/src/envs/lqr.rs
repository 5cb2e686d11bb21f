//! Finite-horizon linear quadratic regulator with linear feedback
//! `a_t = theta_t s_t` over periods `t = 0..T-1` and terminal cost `Q_T`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::mdp::{PathRecord, Simulator};
use crate::optim::{estimate_smoothness, pgd, spectral_norm, ExactOracle, FeasibleSet, PgdOptions};
use crate::params::{Layout, PolicyParams};

const SYM_TOL: f64 = 1e-8;

/// Matrices are row-major nested arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LqrParams {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    /// `Q_0..Q_T` (T + 1 matrices).
    pub q: Vec<Vec<Vec<f64>>>,
    /// `R_0..R_{T-1}`.
    pub r: Vec<Vec<Vec<f64>>>,
    /// Noise covariances `W_0..W_{T-1}`.
    pub w: Vec<Vec<Vec<f64>>>,
    pub x0: Vec<Vec<f64>>,
    pub init_mean: Vec<f64>,
    pub sigma_theta_bar: f64,
}

impl LqrParams {
    /// Time-invariant costs and noise repeated over the horizon.
    #[allow(clippy::too_many_arguments)]
    pub fn time_invariant(
        a: &DMatrix<f64>,
        b: &DMatrix<f64>,
        q: &DMatrix<f64>,
        r: &DMatrix<f64>,
        w: &DMatrix<f64>,
        x0: &DMatrix<f64>,
        init_mean: &[f64],
        sigma_theta_bar: f64,
        horizon: usize,
    ) -> Self {
        LqrParams {
            a: to_rows(a),
            b: to_rows(b),
            q: vec![to_rows(q); horizon + 1],
            r: vec![to_rows(r); horizon],
            w: vec![to_rows(w); horizon],
            x0: to_rows(x0),
            init_mean: init_mean.to_vec(),
            sigma_theta_bar,
        }
    }
}

pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn from_rows(rows: &[Vec<f64>], what: &str, nrows: usize, ncols: usize) -> Result<DMatrix<f64>> {
    if rows.len() != nrows || rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::InvalidEnv(format!("{what} must be {nrows} x {ncols}")));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

fn min_eig(m: &DMatrix<f64>) -> f64 {
    m.clone().symmetric_eigenvalues().min()
}

fn max_eig(m: &DMatrix<f64>) -> f64 {
    m.clone().symmetric_eigenvalues().max()
}

fn asymmetry(m: &DMatrix<f64>) -> f64 {
    (m - m.transpose()).amax()
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

fn pd_matrix(rows: &[Vec<f64>], what: &str, dim: usize) -> Result<DMatrix<f64>> {
    let m = from_rows(rows, what, dim, dim)?;
    if asymmetry(&m) > SYM_TOL * (1.0 + m.amax()) {
        return Err(Error::InvalidEnv(format!("{what} is not symmetric")));
    }
    let m = symmetrize(&m);
    if !(min_eig(&m) > 0.0) {
        return Err(Error::InvalidEnv(format!("{what} is not positive definite")));
    }
    Ok(m)
}

#[derive(Debug, Clone)]
pub struct LqrOptimum {
    pub theta: PolicyParams,
    pub value: f64,
    /// True when the unconstrained Riccati gains left the spectral ball and
    /// the optimum was found by projected gradient descent instead.
    pub constrained: bool,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct Lqr {
    pub params: LqrParams,
    pub horizon: usize,
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub q: Vec<DMatrix<f64>>,
    pub r: Vec<DMatrix<f64>>,
    pub w: Vec<DMatrix<f64>>,
    /// `E[s_0 s_0^T] = X0 + mean mean^T`.
    pub sigma0: DMatrix<f64>,
    mean: DVector<f64>,
    chol_x0: DMatrix<f64>,
    chol_w: Vec<DMatrix<f64>>,
    pub sigma_bar: f64,
}

impl Lqr {
    pub fn new(horizon: usize, params: LqrParams) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::InvalidEnv("horizon must be positive".into()));
        }
        let m = params.a.len();
        let n = params.b.first().map_or(0, |r| r.len());
        if m == 0 || n == 0 {
            return Err(Error::InvalidEnv("A and B must be non-empty".into()));
        }
        let a = from_rows(&params.a, "A", m, m)?;
        let b = from_rows(&params.b, "B", m, n)?;
        if params.q.len() != horizon + 1 || params.r.len() != horizon || params.w.len() != horizon {
            return Err(Error::InvalidEnv(format!("need {} Q, {horizon} R and {horizon} W matrices", horizon + 1)));
        }
        let q = params
            .q
            .iter()
            .enumerate()
            .map(|(t, x)| pd_matrix(x, &format!("Q[{t}]"), m))
            .collect::<Result<Vec<_>>>()?;
        let r = params
            .r
            .iter()
            .enumerate()
            .map(|(t, x)| pd_matrix(x, &format!("R[{t}]"), n))
            .collect::<Result<Vec<_>>>()?;
        let w = params
            .w
            .iter()
            .enumerate()
            .map(|(t, x)| pd_matrix(x, &format!("W[{t}]"), m))
            .collect::<Result<Vec<_>>>()?;
        let x0 = pd_matrix(&params.x0, "X0", m)?;
        if params.init_mean.len() != m {
            return Err(Error::InvalidEnv(format!("init_mean must have {m} entries")));
        }
        let sigma_bar = params.sigma_theta_bar;
        if !(sigma_bar > 0.0) {
            return Err(Error::InvalidEnv("sigma_theta_bar must be positive".into()));
        }
        let margin = spectral_norm(&a) + spectral_norm(&b) * sigma_bar;
        if margin > 1.0 + 1e-12 {
            return Err(Error::InvalidEnv(format!(
                "stability margin ||A|| + ||B|| sigma_theta_bar = {margin} exceeds 1"
            )));
        }
        let mean = DVector::from_vec(params.init_mean.clone());
        let sigma0 = &x0 + &mean * mean.transpose();
        let chol = |x: &DMatrix<f64>| {
            x.clone()
                .cholesky()
                .map(|c| c.l())
                .ok_or_else(|| Error::InvalidEnv("covariance is not positive definite".into()))
        };
        let chol_x0 = chol(&x0)?;
        let chol_w = w.iter().map(chol).collect::<Result<Vec<_>>>()?;
        Ok(Lqr { params, horizon, a, b, q, r, w, sigma0, mean, chol_x0, chol_w, sigma_bar })
    }

    pub fn m(&self) -> usize {
        self.a.nrows()
    }

    pub fn n(&self) -> usize {
        self.b.ncols()
    }

    pub fn feasible_sets(&self) -> Vec<FeasibleSet> {
        vec![FeasibleSet::SpectralBall { radius: self.sigma_bar }; self.horizon]
    }

    pub fn zero_policy(&self) -> PolicyParams {
        PolicyParams::new(Layout::Lqr, vec![DMatrix::zeros(self.n(), self.m()); self.horizon])
    }

    pub fn check_feasible(&self, theta: &PolicyParams) -> Result<()> {
        theta.check_shape(Layout::Lqr, self.horizon, self.n(), self.m())?;
        for (t, b) in theta.blocks.iter().enumerate() {
            let s = spectral_norm(b);
            if s > self.sigma_bar * (1.0 + 1e-9) {
                return Err(Error::InfeasiblePoint(format!("||theta[{t}]|| = {s} exceeds {}", self.sigma_bar)));
            }
        }
        Ok(())
    }

    fn closed_loop(&self, th: &DMatrix<f64>) -> DMatrix<f64> {
        &self.a + &self.b * th
    }

    /// Backward recursion for `P_t` and `L_t`, `t = 0..=T`.
    pub fn p_recursion(&self, theta: &PolicyParams) -> Result<(Vec<DMatrix<f64>>, Vec<f64>)> {
        theta.check_shape(Layout::Lqr, self.horizon, self.n(), self.m())?;
        let tt = self.horizon;
        let mut p = vec![DMatrix::zeros(self.m(), self.m()); tt + 1];
        let mut l = vec![0.0; tt + 1];
        p[tt] = self.q[tt].clone();
        for t in (0..tt).rev() {
            let th = &theta.blocks[t];
            let k = self.closed_loop(th);
            let raw = &self.q[t] + th.transpose() * &self.r[t] * th + k.transpose() * &p[t + 1] * &k;
            if asymmetry(&raw) > SYM_TOL * (1.0 + raw.amax()) {
                return Err(Error::numerical(format!("P[{t}] lost symmetry")));
            }
            p[t] = symmetrize(&raw);
            l[t] = l[t + 1] + (&p[t + 1] * &self.w[t]).trace();
        }
        Ok((p, l))
    }

    /// Second moments `E[s_t s_t^T]`, `t = 0..=T`.
    pub fn state_covariances(&self, theta: &PolicyParams) -> Result<Vec<DMatrix<f64>>> {
        theta.check_shape(Layout::Lqr, self.horizon, self.n(), self.m())?;
        let mut out = Vec::with_capacity(self.horizon + 1);
        out.push(self.sigma0.clone());
        for t in 0..self.horizon {
            let k = self.closed_loop(&theta.blocks[t]);
            let next = symmetrize(&(&k * &out[t] * k.transpose() + &self.w[t]));
            if !(min_eig(&next) > 0.0) {
                return Err(Error::numerical(format!("state second moment at t = {} is not positive definite", t + 1)));
            }
            out.push(next);
        }
        Ok(out)
    }

    /// `l(theta) = tr(P_0 Sigma_0) + L_0`.
    pub fn cost(&self, theta: &PolicyParams) -> Result<f64> {
        let (p, l) = self.p_recursion(theta)?;
        Ok((&p[0] * &self.sigma0).trace() + l[0])
    }

    fn e_matrix(&self, t: usize, th: &DMatrix<f64>, p_next: &DMatrix<f64>) -> DMatrix<f64> {
        let bt_p = self.b.transpose() * p_next;
        (&self.r[t] + &bt_p * &self.b) * th + bt_p * &self.a
    }

    /// `grad_t l = 2 E_t Sigma_t`.
    pub fn gradient(&self, theta: &PolicyParams) -> Result<PolicyParams> {
        let (p, _) = self.p_recursion(theta)?;
        let sig = self.state_covariances(theta)?;
        let blocks = (0..self.horizon).map(|t| self.e_matrix(t, &theta.blocks[t], &p[t + 1]) * &sig[t] * 2.0).collect();
        Ok(PolicyParams::new(Layout::Lqr, blocks))
    }

    /// Unconstrained Riccati gains `-(R + B'PB)^{-1} B'PA`.
    pub fn riccati_gains(&self) -> Result<PolicyParams> {
        let mut p = self.q[self.horizon].clone();
        let mut blocks = vec![DMatrix::zeros(self.n(), self.m()); self.horizon];
        for t in (0..self.horizon).rev() {
            let bt_p = self.b.transpose() * &p;
            let h = &self.r[t] + &bt_p * &self.b;
            let chol = h.clone().cholesky().ok_or_else(|| Error::numerical(format!("R + B'PB singular at t = {t}")))?;
            let th = -chol.solve(&(bt_p * &self.a));
            let k = self.closed_loop(&th);
            p = symmetrize(&(&self.q[t] + th.transpose() * &self.r[t] * &th + k.transpose() * &p * &k));
            blocks[t] = th;
        }
        Ok(PolicyParams::new(Layout::Lqr, blocks))
    }

    /// Optimum over the spectral-ball policy set. Falls back to projected
    /// gradient descent (with a warning) when a Riccati gain is infeasible.
    pub fn optimum(&self) -> Result<LqrOptimum> {
        let gains = self.riccati_gains()?;
        if self.check_feasible(&gains).is_ok() {
            let value = self.cost(&gains)?;
            return Ok(LqrOptimum { theta: gains, value, constrained: false, warnings: Vec::new() });
        }
        let msg = "Riccati gains leave the spectral ball; using the projected gradient fixed point".to_string();
        log::warn!("{msg}");
        let sets = self.feasible_sets();
        let start = crate::optim::project_params(&sets, &gains)?;
        let l = estimate_smoothness(self, &sets, &start, 50, 0)?.max(1e-6);
        let report = pgd(self, &sets, &start, &PgdOptions::new(200_000, l).with_tolerance(1e-13))?;
        let value = self.cost(&report.final_params)?;
        Ok(LqrOptimum { theta: report.final_params, value, constrained: true, warnings: vec![msg] })
    }

    pub fn sigma_q_bar(&self) -> f64 {
        self.q.iter().map(max_eig).fold(0.0, f64::max)
    }

    pub fn sigma_r_bar(&self) -> f64 {
        self.r.iter().map(max_eig).fold(0.0, f64::max)
    }

    pub fn sigma_r_min(&self) -> f64 {
        self.r.iter().map(min_eig).fold(f64::INFINITY, f64::min)
    }

    pub fn sigma_w_bar(&self) -> f64 {
        self.w.iter().map(max_eig).fold(0.0, f64::max)
    }

    /// Lower bound on the smallest eigenvalue of every state second moment.
    pub fn sigma_x_min(&self) -> f64 {
        self.w.iter().map(min_eig).fold(min_eig(&self.sigma0), f64::min)
    }

    /// Explicit gradient-norm bound at period `t` (0-based).
    pub fn gradient_bound(&self, t: usize) -> f64 {
        let tt = self.horizon as f64;
        let tp = t as f64 + 1.0;
        let (sb, sr, sq) = (self.sigma_bar, self.sigma_r_bar(), self.sigma_q_bar());
        let nb = spectral_norm(&self.b);
        let rank = self.m().min(self.n()) as f64;
        2.0 * rank.sqrt()
            * (sb * sr + (tt - tp + 1.0) * sq * nb + (tt - tp) * sb * sb * sr * nb)
            * (max_eig(&self.sigma0) + tp * self.sigma_w_bar())
    }

    /// `E[Q*_t(s_t, theta_t s_t)]` for second moment `sigma_t`, given the
    /// optimal cost-to-go matrix `p_next = P*_{t+1}`. The constant noise
    /// term is omitted.
    pub fn expected_q_star(&self, t: usize, th: &DMatrix<f64>, sigma_t: &DMatrix<f64>, p_next: &DMatrix<f64>) -> f64 {
        let k = self.closed_loop(th);
        let m = &self.q[t] + th.transpose() * &self.r[t] * th + k.transpose() * p_next * &k;
        (m * sigma_t).trace()
    }

    fn normals(&self, u: &[f64]) -> DVector<f64> {
        let z = Normal::standard();
        DVector::from_iterator(u.len(), u.iter().map(|&x| z.inverse_cdf(x)))
    }
}

impl ExactOracle for Lqr {
    fn value(&self, theta: &PolicyParams) -> Result<f64> {
        self.cost(theta)
    }

    fn gradient(&self, theta: &PolicyParams) -> Result<PolicyParams> {
        Lqr::gradient(self, theta)
    }
}

impl Simulator for Lqr {
    fn horizon(&self) -> usize {
        self.horizon
    }

    fn initial_draws(&self) -> usize {
        self.m()
    }

    fn period_draws(&self) -> usize {
        self.m()
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
        let m = self.m();
        let mut s = &self.mean + &self.chol_x0 * self.normals(initial);
        let mut total = 0.0;
        for t in 0..self.horizon {
            let a = &theta.blocks[t] * &s;
            let mut c = s.dot(&(&self.q[t] * &s)) + a.dot(&(&self.r[t] * &a));
            let next = &self.a * &s + &self.b * &a + &self.chol_w[t] * self.normals(&periods[t * m..(t + 1) * m]);
            if t + 1 == self.horizon {
                c += next.dot(&(&self.q[self.horizon] * &next));
            }
            if let Some(rec) = record.as_deref_mut() {
                rec.states.push(s.iter().copied().collect());
                rec.actions.push(a.iter().copied().collect());
                rec.stage_costs.push(c);
            }
            total += c;
            s = next;
        }
        if let Some(rec) = record {
            rec.terminal_state = Some(s.iter().copied().collect());
        }
        total
    }
}
