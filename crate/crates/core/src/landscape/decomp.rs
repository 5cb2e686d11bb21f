use serde::{Deserialize, Serialize};

use crate::envs::cash::CashDpSolution;
use crate::envs::grid::GridConfig;
use crate::envs::inventory::DpSolution;
use crate::envs::tabular::TabularOptimum;
use crate::envs::Model;
use crate::error::{Error, Result};
use crate::params::PolicyParams;

/// Optimal tables a spot check compares against.
#[derive(Debug, Clone)]
pub enum DecompReference {
    Tabular(TabularOptimum),
    Inventory(DpSolution),
    CashBalance(CashDpSolution),
}

impl DecompReference {
    /// Solves the family's DP. LQR has no explicit decomposition constant
    /// and is rejected.
    pub fn new(model: &Model, cfg: GridConfig) -> Result<Self> {
        match model {
            Model::Tabular(e) => Ok(DecompReference::Tabular(e.dp_optimal()?)),
            Model::Inventory(e) => Ok(DecompReference::Inventory(e.dp_oracle(cfg)?)),
            Model::CashBalance(e) => Ok(DecompReference::CashBalance(e.dp_oracle(cfg)?)),
            Model::Lqr(_) => {
                Err(Error::InvalidArgument("no explicit sequential-decomposition constant for LQR".into()))
            }
        }
    }

    pub fn theta(&self) -> &PolicyParams {
        match self {
            DecompReference::Tabular(o) => &o.theta,
            DecompReference::Inventory(o) => &o.theta,
            DecompReference::CashBalance(o) => &o.theta,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecompStatus {
    Pass,
    /// Negative margin smaller than the statistical slack.
    Inconclusive,
    Fail,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeqDecompReport {
    /// 0-based periods, `t < k`.
    pub t: usize,
    pub k: usize,
    pub lhs: f64,
    pub rhs: f64,
    pub margin: f64,
    /// Combined standard error of the margin; zero when exact.
    pub stderr: f64,
    pub status: DecompStatus,
}

/// Both sides of the sequential decomposition inequality at `theta` for
/// 0-based periods `t < k < T`. Monte Carlo families use `n` common paths,
/// and a negative margin within `stat_k` standard errors is inconclusive.
#[allow(clippy::too_many_arguments)]
pub fn seq_decomp_spot_check(
    model: &Model,
    reference: &DecompReference,
    theta: &PolicyParams,
    t: usize,
    k: usize,
    n: usize,
    seed: u64,
    stat_k: f64,
) -> Result<SeqDecompReport> {
    let (lhs, rhs, stderr) = match (model, reference) {
        (Model::Tabular(e), DecompReference::Tabular(o)) => {
            let (l, r) = e.seq_decomposition(theta, o, t, k)?;
            (l, r, 0.0)
        }
        (Model::Inventory(e), DecompReference::Inventory(o)) => {
            let est = e.seq_decomposition(theta, o, t, k, n, seed)?;
            (est.lhs, est.rhs, est.combined_stderr())
        }
        (Model::CashBalance(e), DecompReference::CashBalance(o)) => {
            let est = e.seq_decomposition(theta, o, t, k, n, seed)?;
            (est.lhs, est.rhs, est.combined_stderr())
        }
        _ => return Err(Error::InvalidArgument("reference does not match the model family".into())),
    };
    let margin = rhs - lhs;
    let exact_tol = 1e-10 * (1.0 + rhs.abs());
    let status = if margin >= -exact_tol {
        DecompStatus::Pass
    } else if margin >= -stat_k * stderr {
        DecompStatus::Inconclusive
    } else {
        DecompStatus::Fail
    };
    Ok(SeqDecompReport { t, k, lhs, rhs, margin, stderr, status })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::desk;
    use crate::optim::sample_params;
    use crate::rng::stream_rng;

    #[test]
    fn optimum_gives_zero_on_both_sides() {
        let model = Model::Tabular(desk::tabular_desk());
        let reference = DecompReference::new(&model, GridConfig::EVAL).unwrap();
        let r = seq_decomp_spot_check(&model, &reference, &reference.theta().clone(), 0, 2, 0, 0, 3.0).unwrap();
        assert!(r.lhs.abs() < 1e-12 && r.rhs.abs() < 1e-12);
    }

    #[test]
    fn tabular_margins_are_nonnegative() {
        let env = desk::tabular_desk();
        let sets = env.feasible_sets();
        let model = Model::Tabular(env);
        let reference = DecompReference::new(&model, GridConfig::EVAL).unwrap();
        let mut rng = stream_rng(4, 4);
        for _ in 0..5 {
            let theta = sample_params(&sets, reference.theta(), &mut rng);
            for k in 1..4 {
                for t in 0..k {
                    let r = seq_decomp_spot_check(&model, &reference, &theta, t, k, 0, 0, 3.0).unwrap();
                    assert_eq!(r.status, DecompStatus::Pass, "{r:?}");
                }
            }
        }
    }

    #[test]
    fn lqr_is_rejected() {
        let model = Model::Lqr(desk::lqr_desk());
        assert!(DecompReference::new(&model, GridConfig::EVAL).is_err());
    }
}
