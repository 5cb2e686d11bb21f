//! Small reference instances of each family, used by tests, examples and
//! the acceptance harness.

use nalgebra::DMatrix;

use crate::envs::cash::{CashBalance, CashParams};
use crate::envs::demand::Demand;
use crate::envs::inventory::{Inventory, InventoryParams};
use crate::envs::lqr::{Lqr, LqrParams};
use crate::envs::tabular::{TabularMdp, TabularParams};
use crate::mdp::{EnvSpec, FamilyParams};

/// Tabular: 3 states, 3 actions, `T = 4`, `lambda = 0.1`, `C_bar = 1`.
pub fn tabular_spec() -> EnvSpec {
    let horizon = 4;
    EnvSpec { horizon, params: FamilyParams::Tabular(TabularParams::random(3, 3, horizon, 0.1, 1.0, 1.0, 2024)) }
}

/// LQR: 2 states, 1 input, `T = 5`, with the spectral-ball radius chosen so
/// that `||A|| + ||B|| sigma_bar = 1`.
pub fn lqr_spec() -> EnvSpec {
    let horizon = 5;
    let a = DMatrix::from_row_slice(2, 2, &[0.5, 0.1, 0.0, 0.4]);
    let b = DMatrix::from_row_slice(2, 1, &[0.3, 0.2]);
    let sigma_bar = (1.0 - crate::optim::spectral_norm(&a)) / crate::optim::spectral_norm(&b);
    let q = DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 0.8]);
    let r = DMatrix::from_element(1, 1, 0.5);
    let w = DMatrix::from_row_slice(2, 2, &[0.1, 0.0, 0.0, 0.1]);
    let x0 = DMatrix::identity(2, 2);
    let params = LqrParams::time_invariant(&a, &b, &q, &r, &w, &x0, &[1.0, -0.5], sigma_bar, horizon);
    EnvSpec { horizon, params: FamilyParams::Lqr(params) }
}

/// Inventory: two world states, `T = 4`, `B = 10`, `h = b = 1`, demand
/// `U[0, 12]` and `U[0, 14]`, initial inventory `U[-2, 10]` so that
/// `P(x_1 <= 0) = alpha_D`.
pub fn inventory_spec() -> EnvSpec {
    let horizon = 4;
    let params = InventoryParams {
        transition: vec![vec![0.7, 0.3], vec![0.4, 0.6]],
        demand: vec![Demand::Uniform { a: 0.0, b: 12.0 }, Demand::Uniform { a: 0.0, b: 14.0 }],
        holding: vec![1.0; horizon],
        backlog: vec![1.0; horizon],
        cap: 10.0,
        init_lo: -2.0,
        init_hi: 10.0,
    };
    EnvSpec { horizon, params: FamilyParams::Inventory(params) }
}

/// Cash balance: `T = 4`, bounds `[-5, 5]`, demand and initial balance
/// `U[-8, 8]`, `k = 0.5`, `q = 0.2`, `h = 1`, `b = 2`.
pub fn cash_spec() -> EnvSpec {
    let horizon = 4;
    let params = CashParams {
        order_cost: 0.5,
        refund: 0.2,
        holding: vec![1.0; horizon],
        backlog: vec![2.0; horizon],
        demand: Demand::Uniform { a: -8.0, b: 8.0 },
        lower: -5.0,
        upper: 5.0,
        init_lo: -8.0,
        init_hi: 8.0,
    };
    EnvSpec { horizon, params: FamilyParams::CashBalance(params) }
}

macro_rules! build {
    ($spec:expr, $variant:ident, $ty:ty) => {{
        let spec = $spec;
        match spec.params {
            FamilyParams::$variant(p) => <$ty>::new(spec.horizon, p).expect("desk instance is valid"),
            _ => unreachable!(),
        }
    }};
}

pub fn tabular_desk() -> TabularMdp {
    build!(tabular_spec(), Tabular, TabularMdp)
}

pub fn lqr_desk() -> Lqr {
    build!(lqr_spec(), Lqr, Lqr)
}

pub fn inventory_desk() -> Inventory {
    build!(inventory_spec(), Inventory, Inventory)
}

pub fn cash_desk() -> CashBalance {
    build!(cash_spec(), CashBalance, CashBalance)
}
