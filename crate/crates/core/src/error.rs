use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid policy: {0}")]
    InvalidPolicy(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid feasible set: {0}")]
    InvalidSet(String),
    #[error("point is not feasible: {0}")]
    InfeasiblePoint(String),
    #[error("invalid environment: {0}")]
    InvalidEnv(String),
    #[error("numerical error at iterate {iter:?}: {msg}")]
    Numerical { iter: Option<usize>, msg: String },
    #[error("sequence premise violated at t = {t}: |X_t - Y_t| = {lhs} > {rhs}")]
    PremiseViolated { t: usize, lhs: f64, rhs: f64 },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical { iter: None, msg: msg.into() }
    }

    pub fn numerical_at(iter: usize, msg: impl Into<String>) -> Self {
        Error::Numerical { iter: Some(iter), msg: msg.into() }
    }
}
