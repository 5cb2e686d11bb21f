//! Projections, stationarity measures and projected (stochastic) gradient descent.

mod feasible;
mod pgd;
mod smoothness;

pub use feasible::{
    contains_params, interior_margin, pg_norm_sq_params, project_params, sample_interior_params, sample_params,
    spectral_norm, FeasibleSet, FEASIBILITY_TOL,
};
pub use pgd::{
    fit_contraction, pgd, psgd, ConvergenceReport, Evaluator, ExactOracle, FnOracle, PgdOptions, StochasticOracle,
};
pub use smoothness::estimate_smoothness;
