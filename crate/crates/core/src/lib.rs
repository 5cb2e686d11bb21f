//! Finite-horizon policy-gradient laboratory.
//!
//! Four MDP families (entropy-regularized tabular, LQR, inventory with
//! Markov-modulated demand, stochastic cash balance) share one trajectory
//! simulator, one set of projected-gradient optimizers and one landscape
//! certification toolkit. Every family ships a ground-truth oracle
//! (exact DP, Riccati recursion or grid DP) so that suboptimality gaps are
//! always measured against a trusted reference.
//!
//! ```
//! use pglab_core::desk;
//! use pglab_core::objective::{AsExact, PolicyObjective};
//! use pglab_core::optim::{estimate_smoothness, pgd, PgdOptions};
//!
//! let env = desk::tabular_desk();
//! let opt = PolicyObjective::optimum(&env)?;
//! let sets = PolicyObjective::feasible_sets(&env);
//! let oracle = AsExact::new(&env);
//! let l = estimate_smoothness(&oracle, &sets, &env.template(), 200, 0)?;
//! let report = pgd(&oracle, &sets, &env.template(), &PgdOptions::new(2000, l).with_reference(opt.value))?;
//! assert!(report.final_gap().unwrap() < 1e-8);
//! # Ok::<(), pglab_core::Error>(())
//! ```

// NaN-rejecting guards are written as `!(x > 0.0)` on purpose, and the
// numerical loops read better with explicit indices.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod desk;
pub mod envs;
pub mod error;
pub mod landscape;
pub mod mdp;
pub mod objective;
pub mod optim;
pub mod params;
pub mod report;
pub mod rng;
pub mod stats;

pub use error::{Error, Result};
pub use mdp::{CostEstimate, EnvSpec, Family, Trajectory};
pub use objective::{GradientEstimate, PolicyObjective};
pub use optim::{ConvergenceReport, FeasibleSet};
pub use params::PolicyParams;
