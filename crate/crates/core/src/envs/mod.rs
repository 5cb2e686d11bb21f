//! The four model families and a closed enum over them.

pub mod cash;
pub mod demand;
pub mod grid;
pub mod inventory;
pub mod lqr;
pub mod tabular;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::mdp::{CostEstimate, EnvSpec, FamilyParams, PathRecord, Simulator};
use crate::params::PolicyParams;

use self::cash::CashBalance;
use self::inventory::Inventory;
use self::lqr::Lqr;
use self::tabular::TabularMdp;

/// IPA gradient estimate together with the cost on the same paths.
#[derive(Debug, Clone)]
pub struct IpaEstimate {
    pub gradient: PolicyParams,
    pub stderr: PolicyParams,
    pub cost: CostEstimate,
}

/// Monte Carlo estimate of both sides of the sequential decomposition
/// inequality.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeqDecompEstimate {
    pub lhs: f64,
    pub lhs_stderr: f64,
    pub rhs: f64,
    pub rhs_stderr: f64,
}

impl SeqDecompEstimate {
    pub fn margin(&self) -> f64 {
        self.rhs - self.lhs
    }

    pub fn combined_stderr(&self) -> f64 {
        self.lhs_stderr.hypot(self.rhs_stderr)
    }
}

/// A validated environment of any family.
#[derive(Debug, Clone)]
#[allow(clippy::large_enum_variant)]
pub enum Model {
    Tabular(TabularMdp),
    Lqr(Lqr),
    Inventory(Inventory),
    CashBalance(CashBalance),
}

impl Model {
    pub fn from_spec(spec: &EnvSpec) -> Result<Model> {
        let t = spec.horizon;
        Ok(match &spec.params {
            FamilyParams::Tabular(p) => Model::Tabular(TabularMdp::new(t, p.clone())?),
            FamilyParams::Lqr(p) => Model::Lqr(Lqr::new(t, p.clone())?),
            FamilyParams::Inventory(p) => Model::Inventory(Inventory::new(t, p.clone())?),
            FamilyParams::CashBalance(p) => Model::CashBalance(CashBalance::new(t, p.clone())?),
        })
    }
}

macro_rules! dispatch {
    ($self:expr, $env:ident => $body:expr) => {
        match $self {
            Model::Tabular($env) => $body,
            Model::Lqr($env) => $body,
            Model::Inventory($env) => $body,
            Model::CashBalance($env) => $body,
        }
    };
}
pub(crate) use dispatch;

impl Simulator for Model {
    fn horizon(&self) -> usize {
        dispatch!(self, e => e.horizon)
    }

    fn initial_draws(&self) -> usize {
        dispatch!(self, e => e.initial_draws())
    }

    fn period_draws(&self) -> usize {
        dispatch!(self, e => e.period_draws())
    }

    fn check_policy(&self, theta: &PolicyParams) -> Result<()> {
        dispatch!(self, e => e.check_policy(theta))
    }

    fn rollout(&self, theta: &PolicyParams, initial: &[f64], periods: &[f64], record: Option<&mut PathRecord>) -> f64 {
        dispatch!(self, e => e.rollout(theta, initial, periods, record))
    }
}
