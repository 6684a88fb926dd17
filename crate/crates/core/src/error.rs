use thiserror::Error;

/// Errors surfaced by the design and validation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("constraint violation for user {user}: {detail}")]
    ConstraintViolation { user: usize, detail: String },

    #[error("target unidentifiable: {0}")]
    Unidentifiable(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("direction unobservable: denominator {denominator:e} below threshold {threshold:e}")]
    DirectionUnobservable { denominator: f64, threshold: f64 },

    #[error("problem infeasible: {0}")]
    Infeasible(String),

    #[error("conic solver failed ({status}): max residual {max_residual:e} in {worst_constraint}")]
    Solver {
        status: String,
        max_residual: f64,
        worst_constraint: String,
    },

    #[error("rank-one extraction failed: rank ratio {ratio:.6} below {threshold}")]
    RankOne { ratio: f64, threshold: f64 },

    #[error("internal error: {0}")]
    Internal(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for outcomes that mean "no design exists" rather than a fault.
    pub fn is_infeasible(&self) -> bool {
        matches!(self, Error::Infeasible(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}
