//! Environment description, trajectory simulation and Monte Carlo cost
//! evaluation shared by the four model families.
//!
//! Every source of randomness is an open-interval uniform draw that the
//! family turns into a state, action or disturbance by inverse-CDF. A path is
//! therefore a deterministic function of `(theta, draws)`. Re-running it with
//! the same draws and a perturbed `theta` gives a common-random-number path,
//! and because the number of draws never depends on `theta`, two calls to
//! [`mc_cost`] with the same seed are automatically coupled.

use std::fmt;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::envs::cash::CashParams;
use crate::envs::inventory::InventoryParams;
use crate::envs::lqr::LqrParams;
use crate::envs::tabular::TabularParams;
use crate::envs::Model;
use crate::error::{Error, Result};
use crate::params::PolicyParams;
use crate::rng::{fill_uniform, stream_rng, SimRng};
use crate::stats::Moments;

/// Trajectories per RNG stream in batched simulation.
pub const CHUNK: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Tabular,
    Lqr,
    Inventory,
    CashBalance,
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Family::Tabular => "tabular",
            Family::Lqr => "lqr",
            Family::Inventory => "inventory",
            Family::CashBalance => "cash_balance",
        };
        f.write_str(s)
    }
}

/// Model-specific constants.
#[derive(Debug, Clone, PartialEq)]
pub enum FamilyParams {
    Tabular(TabularParams),
    Lqr(LqrParams),
    Inventory(InventoryParams),
    CashBalance(CashParams),
}

impl FamilyParams {
    pub fn family(&self) -> Family {
        match self {
            FamilyParams::Tabular(_) => Family::Tabular,
            FamilyParams::Lqr(_) => Family::Lqr,
            FamilyParams::Inventory(_) => Family::Inventory,
            FamilyParams::CashBalance(_) => Family::CashBalance,
        }
    }
}

fn resize_periods<T: Clone>(v: &mut Vec<T>, len: usize) -> Result<()> {
    let last = v.last().cloned().ok_or_else(|| Error::InvalidEnv("per-period data is empty".into()))?;
    v.resize(len, last);
    Ok(())
}

/// A finite-horizon MDP instance. Serializes as
/// `{"family": ..., "horizon": T, "family_params": {...}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawEnvSpec", into = "RawEnvSpec")]
pub struct EnvSpec {
    pub horizon: usize,
    pub params: FamilyParams,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEnvSpec {
    family: Family,
    horizon: usize,
    family_params: serde_json::Value,
}

impl TryFrom<RawEnvSpec> for EnvSpec {
    type Error = String;

    fn try_from(raw: RawEnvSpec) -> std::result::Result<Self, String> {
        let v = raw.family_params;
        let params = match raw.family {
            Family::Tabular => serde_json::from_value(v).map(FamilyParams::Tabular),
            Family::Lqr => serde_json::from_value(v).map(FamilyParams::Lqr),
            Family::Inventory => serde_json::from_value(v).map(FamilyParams::Inventory),
            Family::CashBalance => serde_json::from_value(v).map(FamilyParams::CashBalance),
        }
        .map_err(|e| format!("family_params for {}: {e}", raw.family))?;
        Ok(EnvSpec { horizon: raw.horizon, params })
    }
}

impl From<EnvSpec> for RawEnvSpec {
    fn from(spec: EnvSpec) -> Self {
        let family = spec.params.family();
        let family_params = match spec.params {
            FamilyParams::Tabular(p) => serde_json::to_value(p),
            FamilyParams::Lqr(p) => serde_json::to_value(p),
            FamilyParams::Inventory(p) => serde_json::to_value(p),
            FamilyParams::CashBalance(p) => serde_json::to_value(p),
        }
        .expect("parameter structs serialize");
        RawEnvSpec { family, horizon: spec.horizon, family_params }
    }
}

impl EnvSpec {
    pub fn family(&self) -> Family {
        self.params.family()
    }

    /// Validates the constants and precomputes derived quantities.
    pub fn build(&self) -> Result<Model> {
        Model::from_spec(self)
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Same instance with horizon `horizon`: per-period data is truncated,
    /// or extended by repeating the last period (LQR keeps its terminal
    /// cost matrix last).
    pub fn with_horizon(&self, horizon: usize) -> Result<EnvSpec> {
        if horizon == 0 {
            return Err(Error::InvalidArgument("horizon must be positive".into()));
        }
        let mut params = self.params.clone();
        match &mut params {
            FamilyParams::Tabular(p) => {
                resize_periods(&mut p.cost, horizon)?;
                resize_periods(&mut p.transition, horizon)?;
            }
            FamilyParams::Lqr(p) => {
                let terminal = p.q.pop().ok_or_else(|| Error::InvalidEnv("LQR needs Q_T".into()))?;
                resize_periods(&mut p.q, horizon)?;
                p.q.push(terminal);
                resize_periods(&mut p.r, horizon)?;
                resize_periods(&mut p.w, horizon)?;
            }
            FamilyParams::Inventory(p) => {
                resize_periods(&mut p.holding, horizon)?;
                resize_periods(&mut p.backlog, horizon)?;
            }
            FamilyParams::CashBalance(p) => {
                resize_periods(&mut p.holding, horizon)?;
                resize_periods(&mut p.backlog, horizon)?;
            }
        }
        Ok(EnvSpec { horizon, params })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json_str(&text)
    }
}

/// Per-episode record filled by [`Simulator::rollout`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PathRecord {
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub stage_costs: Vec<f64>,
    pub terminal_state: Option<Vec<f64>>,
}

/// Common simulation contract of the four families.
pub trait Simulator: Sync {
    fn horizon(&self) -> usize;
    /// Uniform draws consumed before the first period.
    fn initial_draws(&self) -> usize;
    /// Uniform draws consumed in each period.
    fn period_draws(&self) -> usize;
    fn check_policy(&self, theta: &PolicyParams) -> Result<()>;
    /// Runs one episode and returns its total cost. `periods` holds
    /// `horizon() * period_draws()` draws, period-major.
    fn rollout(&self, theta: &PolicyParams, initial: &[f64], periods: &[f64], record: Option<&mut PathRecord>) -> f64;
}

/// One simulated episode.
///
/// For families with a terminal cost (LQR) that cost is folded into the
/// last stage cost so that `total_cost == sum(stage_costs)` always holds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub stage_costs: Vec<f64>,
    pub terminal_state: Option<Vec<f64>>,
    pub total_cost: f64,
    pub initial_draws: Vec<f64>,
    pub noise_draws: Vec<Vec<f64>>,
    pub seed: u64,
}

impl Trajectory {
    /// One CSV row per period: `t, state..., action..., stage_cost`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "#schema=pglab-trajectory-v1")?;
        writeln!(w, "t,state,action,stage_cost")?;
        for t in 0..self.stage_costs.len() {
            writeln!(w, "{},{},{},{}", t, join(&self.states[t]), join(&self.actions[t]), self.stage_costs[t])?;
        }
        Ok(())
    }
}

fn join(xs: &[f64]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(";")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub n_samples: u64,
}

impl CostEstimate {
    pub fn exact(value: f64) -> Self {
        Self { mean: value, stderr: 0.0, n_samples: 1 }
    }

    pub fn from_moments(m: &Moments) -> Self {
        Self { mean: m.mean, stderr: m.stderr(), n_samples: m.n }
    }
}

/// Costs of two policies on common paths, plus their paired difference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairedEstimate {
    pub first: CostEstimate,
    pub second: CostEstimate,
    /// `first - second`, with the standard error of the paired differences.
    pub diff: CostEstimate,
}

/// Fills the draw buffers for one episode.
pub fn draw_path<S: Simulator + ?Sized>(sim: &S, rng: &mut SimRng, initial: &mut Vec<f64>, periods: &mut Vec<f64>) {
    initial.resize(sim.initial_draws(), 0.0);
    periods.resize(sim.horizon() * sim.period_draws(), 0.0);
    fill_uniform(rng, initial);
    fill_uniform(rng, periods);
}

/// Runs `f(rng, count)` on consecutive chunks of at most [`CHUNK`] items,
/// chunk `c` on stream `c` of `seed`, in parallel. Results come back in
/// chunk order, so any in-order reduction is independent of scheduling.
pub fn chunked<T, F>(n: usize, seed: u64, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(&mut SimRng, usize) -> T + Sync,
{
    let chunks = n.div_ceil(CHUNK);
    (0..chunks)
        .into_par_iter()
        .map(|c| {
            let count = CHUNK.min(n - c * CHUNK);
            let mut rng = stream_rng(seed, c as u64);
            f(&mut rng, count)
        })
        .collect()
}

fn record_trajectory(
    record: PathRecord,
    total: f64,
    initial: Vec<f64>,
    periods: &[f64],
    k: usize,
    seed: u64,
) -> Trajectory {
    let noise_draws = if k == 0 {
        vec![Vec::new(); record.stage_costs.len()]
    } else {
        periods.chunks(k).map(|c| c.to_vec()).collect()
    };
    Trajectory {
        states: record.states,
        actions: record.actions,
        stage_costs: record.stage_costs,
        terminal_state: record.terminal_state,
        total_cost: total,
        initial_draws: initial,
        noise_draws,
        seed,
    }
}

pub fn sample_trajectory<S: Simulator + ?Sized>(sim: &S, theta: &PolicyParams, seed: u64) -> Result<Trajectory> {
    sim.check_policy(theta)?;
    let mut rng = stream_rng(seed, 0);
    let (mut initial, mut periods) = (Vec::new(), Vec::new());
    draw_path(sim, &mut rng, &mut initial, &mut periods);
    let mut rec = PathRecord::default();
    let total = sim.rollout(theta, &initial, &periods, Some(&mut rec));
    Ok(record_trajectory(rec, total, initial, &periods, sim.period_draws(), seed))
}

/// Re-simulates `traj`'s recorded draws under `theta`.
pub fn replay<S: Simulator + ?Sized>(sim: &S, theta: &PolicyParams, traj: &Trajectory) -> Result<Trajectory> {
    sim.check_policy(theta)?;
    if traj.initial_draws.len() != sim.initial_draws()
        || traj.noise_draws.len() != sim.horizon()
        || traj.noise_draws.iter().any(|d| d.len() != sim.period_draws())
    {
        return Err(Error::InvalidArgument("recorded draws do not match the environment".into()));
    }
    let periods: Vec<f64> = traj.noise_draws.concat();
    let mut rec = PathRecord::default();
    let total = sim.rollout(theta, &traj.initial_draws, &periods, Some(&mut rec));
    Ok(record_trajectory(rec, total, traj.initial_draws.clone(), &periods, sim.period_draws(), traj.seed))
}

/// Monte Carlo estimate of `l(theta)` from `n` independent episodes.
pub fn mc_cost<S: Simulator + ?Sized>(sim: &S, theta: &PolicyParams, n: usize, seed: u64) -> Result<CostEstimate> {
    if n == 0 {
        return Err(Error::InvalidArgument("mc_cost needs n >= 1".into()));
    }
    sim.check_policy(theta)?;
    let parts = chunked(n, seed, |rng, count| {
        let (mut initial, mut periods) = (Vec::new(), Vec::new());
        let mut m = Moments::default();
        for _ in 0..count {
            draw_path(sim, rng, &mut initial, &mut periods);
            m.push(sim.rollout(theta, &initial, &periods, None));
        }
        m
    });
    let mut total = Moments::default();
    parts.iter().for_each(|m| total.merge(m));
    Ok(CostEstimate::from_moments(&total))
}

/// Costs of `a` and `b` on the same `n` paths.
pub fn mc_cost_paired<S: Simulator + ?Sized>(
    sim: &S,
    a: &PolicyParams,
    b: &PolicyParams,
    n: usize,
    seed: u64,
) -> Result<PairedEstimate> {
    if n == 0 {
        return Err(Error::InvalidArgument("mc_cost_paired needs n >= 1".into()));
    }
    sim.check_policy(a)?;
    sim.check_policy(b)?;
    let parts = chunked(n, seed, |rng, count| {
        let (mut initial, mut periods) = (Vec::new(), Vec::new());
        let mut m = [Moments::default(); 3];
        for _ in 0..count {
            draw_path(sim, rng, &mut initial, &mut periods);
            let ca = sim.rollout(a, &initial, &periods, None);
            let cb = sim.rollout(b, &initial, &periods, None);
            m[0].push(ca);
            m[1].push(cb);
            m[2].push(ca - cb);
        }
        m
    });
    let mut total = [Moments::default(); 3];
    for p in &parts {
        for k in 0..3 {
            total[k].merge(&p[k]);
        }
    }
    Ok(PairedEstimate {
        first: CostEstimate::from_moments(&total[0]),
        second: CostEstimate::from_moments(&total[1]),
        diff: CostEstimate::from_moments(&total[2]),
    })
}

/// Index of the category selected by uniform `u` under probabilities `p`.
pub(crate) fn categorical(p: impl IntoIterator<Item = f64>, u: f64) -> usize {
    let mut acc = 0.0;
    let mut last = 0;
    for (k, pk) in p.into_iter().enumerate() {
        acc += pk;
        last = k;
        if u < acc {
            return k;
        }
    }
    last
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn categorical_inverse_cdf() {
        let p = [0.2, 0.5, 0.3];
        assert_eq!(categorical(p, 0.1), 0);
        assert_eq!(categorical(p, 0.2), 1);
        assert_eq!(categorical(p, 0.69), 1);
        assert_eq!(categorical(p, 0.7), 2);
        assert_eq!(categorical(p, 0.999_999_999), 2);
    }

    #[test]
    fn horizon_change_keeps_last_period_and_terminal_cost() {
        let spec = crate::desk::lqr_spec();
        let longer = spec.with_horizon(8).unwrap();
        let FamilyParams::Lqr(p) = &longer.params else { unreachable!() };
        let FamilyParams::Lqr(q) = &spec.params else { unreachable!() };
        assert_eq!(p.q.len(), 9);
        assert_eq!(p.q[8], q.q[5]);
        assert_eq!(p.q[7], q.q[4]);
        assert_eq!(p.r.len(), 8);
        longer.build().unwrap();
        assert_eq!(spec.with_horizon(5).unwrap(), spec);
        for s in [crate::desk::tabular_spec(), crate::desk::inventory_spec(), crate::desk::cash_spec()] {
            for t in [1, 2, 7] {
                let m = s.with_horizon(t).unwrap().build().unwrap();
                assert_eq!(m.horizon(), t);
            }
        }
        assert!(spec.with_horizon(0).is_err());
    }

    #[test]
    fn chunk_results_are_ordered() {
        let out = chunked(CHUNK * 2 + 5, 3, |_, count| count);
        assert_eq!(out, vec![CHUNK, CHUNK, 5]);
    }
}
