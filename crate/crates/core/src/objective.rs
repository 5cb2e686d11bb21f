//! Uniform view of the four families as policy-gradient objectives.
//!
//! Costs of the inventory and cash families come from grid policy
//! evaluation and their optima from the grid DP at the same resolution, so
//! suboptimality gaps carry no systematic discretization offset.

use serde::{Deserialize, Serialize};

use crate::envs::cash::CashBalance;
use crate::envs::grid::GridConfig;
use crate::envs::inventory::Inventory;
use crate::envs::lqr::Lqr;
use crate::envs::tabular::TabularMdp;
use crate::envs::{dispatch, Model};
use crate::error::Result;
use crate::mdp::{Family, Simulator};
use crate::optim::{ExactOracle, FeasibleSet, StochasticOracle};
use crate::params::PolicyParams;

/// Gradient of `l` at a point. `stderr` is `None` for exact gradients.
#[derive(Debug, Clone)]
pub struct GradientEstimate {
    pub mean: PolicyParams,
    pub stderr: Option<PolicyParams>,
}

/// Reference optimum used to measure suboptimality.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Optimum {
    pub theta: PolicyParams,
    pub value: f64,
    pub warnings: Vec<String>,
}

pub trait PolicyObjective: Simulator {
    fn family(&self) -> Family;
    fn feasible_sets(&self) -> Vec<FeasibleSet>;
    /// A feasible point of the right shape.
    fn template(&self) -> PolicyParams;
    /// Whether [`PolicyObjective::gradient`] is exact.
    fn exact_gradient(&self) -> bool;
    /// `l(theta)`, exact or by grid evaluation.
    fn cost(&self, theta: &PolicyParams) -> Result<f64>;
    /// Exact gradient, or an IPA estimate from `n` paths.
    fn gradient(&self, theta: &PolicyParams, n: usize, seed: u64) -> Result<GradientEstimate>;
    fn optimum(&self) -> Result<Optimum>;
    /// Closed-form KL constant, when the family has one.
    fn kl_constant(&self) -> Option<f64>;
    fn gradient_bound(&self) -> f64;
}

impl PolicyObjective for TabularMdp {
    fn family(&self) -> Family {
        Family::Tabular
    }

    fn feasible_sets(&self) -> Vec<FeasibleSet> {
        TabularMdp::feasible_sets(self)
    }

    fn template(&self) -> PolicyParams {
        self.uniform_policy()
    }

    fn exact_gradient(&self) -> bool {
        true
    }

    fn cost(&self, theta: &PolicyParams) -> Result<f64> {
        TabularMdp::cost(self, theta)
    }

    fn gradient(&self, theta: &PolicyParams, _n: usize, _seed: u64) -> Result<GradientEstimate> {
        Ok(GradientEstimate { mean: TabularMdp::gradient(self, theta)?, stderr: None })
    }

    fn optimum(&self) -> Result<Optimum> {
        let opt = self.dp_optimal()?;
        Ok(Optimum { theta: opt.theta, value: opt.value, warnings: Vec::new() })
    }

    fn kl_constant(&self) -> Option<f64> {
        Some(TabularMdp::kl_constant(self))
    }

    fn gradient_bound(&self) -> f64 {
        TabularMdp::gradient_bound(self)
    }
}

impl PolicyObjective for Lqr {
    fn family(&self) -> Family {
        Family::Lqr
    }

    fn feasible_sets(&self) -> Vec<FeasibleSet> {
        Lqr::feasible_sets(self)
    }

    fn template(&self) -> PolicyParams {
        self.zero_policy()
    }

    fn exact_gradient(&self) -> bool {
        true
    }

    fn cost(&self, theta: &PolicyParams) -> Result<f64> {
        Lqr::cost(self, theta)
    }

    fn gradient(&self, theta: &PolicyParams, _n: usize, _seed: u64) -> Result<GradientEstimate> {
        Ok(GradientEstimate { mean: Lqr::gradient(self, theta)?, stderr: None })
    }

    fn optimum(&self) -> Result<Optimum> {
        let opt = Lqr::optimum(self)?;
        Ok(Optimum { theta: opt.theta, value: opt.value, warnings: opt.warnings })
    }

    fn kl_constant(&self) -> Option<f64> {
        None
    }

    /// Euclidean norm of the per-period bounds.
    fn gradient_bound(&self) -> f64 {
        (0..self.horizon).map(|t| Lqr::gradient_bound(self, t).powi(2)).sum::<f64>().sqrt()
    }
}

impl PolicyObjective for Inventory {
    fn family(&self) -> Family {
        Family::Inventory
    }

    fn feasible_sets(&self) -> Vec<FeasibleSet> {
        Inventory::feasible_sets(self)
    }

    fn template(&self) -> PolicyParams {
        self.constant_policy(0.5 * self.params.cap)
    }

    fn exact_gradient(&self) -> bool {
        false
    }

    fn cost(&self, theta: &PolicyParams) -> Result<f64> {
        self.grid_cost(theta, GridConfig::EVAL)
    }

    fn gradient(&self, theta: &PolicyParams, n: usize, seed: u64) -> Result<GradientEstimate> {
        let est = self.ipa(theta, n, seed)?;
        Ok(GradientEstimate { mean: est.gradient, stderr: Some(est.stderr) })
    }

    fn optimum(&self) -> Result<Optimum> {
        let dp = self.dp_oracle(GridConfig::EVAL)?;
        Ok(Optimum { theta: dp.theta, value: dp.value, warnings: dp.warnings })
    }

    fn kl_constant(&self) -> Option<f64> {
        Some(Inventory::kl_constant(self))
    }

    fn gradient_bound(&self) -> f64 {
        Inventory::gradient_bound(self)
    }
}

impl PolicyObjective for CashBalance {
    fn family(&self) -> Family {
        Family::CashBalance
    }

    fn feasible_sets(&self) -> Vec<FeasibleSet> {
        CashBalance::feasible_sets(self)
    }

    fn template(&self) -> PolicyParams {
        let mid = 0.5 * (self.params.lower + self.params.upper);
        self.band_policy(mid, mid)
    }

    fn exact_gradient(&self) -> bool {
        false
    }

    fn cost(&self, theta: &PolicyParams) -> Result<f64> {
        self.grid_cost(theta, GridConfig::EVAL)
    }

    fn gradient(&self, theta: &PolicyParams, n: usize, seed: u64) -> Result<GradientEstimate> {
        let est = self.ipa(theta, n, seed)?;
        Ok(GradientEstimate { mean: est.gradient, stderr: Some(est.stderr) })
    }

    fn optimum(&self) -> Result<Optimum> {
        let dp = self.dp_oracle(GridConfig::EVAL)?;
        Ok(Optimum { theta: dp.theta, value: dp.value, warnings: dp.warnings })
    }

    fn kl_constant(&self) -> Option<f64> {
        Some(CashBalance::kl_constant(self))
    }

    fn gradient_bound(&self) -> f64 {
        CashBalance::gradient_bound(self)
    }
}

impl PolicyObjective for Model {
    fn family(&self) -> Family {
        dispatch!(self, e => PolicyObjective::family(e))
    }

    fn feasible_sets(&self) -> Vec<FeasibleSet> {
        dispatch!(self, e => PolicyObjective::feasible_sets(e))
    }

    fn template(&self) -> PolicyParams {
        dispatch!(self, e => PolicyObjective::template(e))
    }

    fn exact_gradient(&self) -> bool {
        dispatch!(self, e => PolicyObjective::exact_gradient(e))
    }

    fn cost(&self, theta: &PolicyParams) -> Result<f64> {
        dispatch!(self, e => PolicyObjective::cost(e, theta))
    }

    fn gradient(&self, theta: &PolicyParams, n: usize, seed: u64) -> Result<GradientEstimate> {
        dispatch!(self, e => PolicyObjective::gradient(e, theta, n, seed))
    }

    fn optimum(&self) -> Result<Optimum> {
        dispatch!(self, e => PolicyObjective::optimum(e))
    }

    fn kl_constant(&self) -> Option<f64> {
        dispatch!(self, e => PolicyObjective::kl_constant(e))
    }

    fn gradient_bound(&self) -> f64 {
        dispatch!(self, e => PolicyObjective::gradient_bound(e))
    }
}

/// Adapts an objective to the deterministic optimizer interface. For
/// Monte Carlo families the gradient uses `batch` paths with a fixed seed.
pub struct AsExact<'a, O: ?Sized> {
    pub objective: &'a O,
    pub batch: usize,
    pub seed: u64,
}

impl<'a, O: PolicyObjective + ?Sized> AsExact<'a, O> {
    pub fn new(objective: &'a O) -> Self {
        AsExact { objective, batch: 0, seed: 0 }
    }
}

impl<O: PolicyObjective + ?Sized> ExactOracle for AsExact<'_, O> {
    fn value(&self, theta: &PolicyParams) -> Result<f64> {
        self.objective.cost(theta)
    }

    fn gradient(&self, theta: &PolicyParams) -> Result<PolicyParams> {
        Ok(self.objective.gradient(theta, self.batch, self.seed)?.mean)
    }
}

/// Adapts an objective to the stochastic optimizer interface.
pub struct AsStochastic<'a, O: ?Sized>(pub &'a O);

impl<O: PolicyObjective + ?Sized> StochasticOracle for AsStochastic<'_, O> {
    fn gradient_estimate(&self, theta: &PolicyParams, batch: usize, seed: u64) -> Result<PolicyParams> {
        Ok(self.0.gradient(theta, batch, seed)?.mean)
    }
}
