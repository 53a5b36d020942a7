use thiserror::Error;

/// Errors raised by the solvers and simulators.
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed problem data: inconsistent dimensions, inverted bounds, empty sets.
    #[error("structural error: {0}")]
    Structural(String),
    /// An argument outside the domain of the function it was passed to.
    #[error("domain error: {0}")]
    Domain(String),
    /// A documented precondition of an operation does not hold.
    #[error("precondition violated: {0}")]
    Precondition(String),
    /// The model misbehaved at runtime (NaN decisions, intensity above its bound, ...).
    #[error("numerical error: {0}")]
    Numerical(String),
    /// An iterative scheme stopped before meeting its tolerance.
    #[error("not converged: {0}")]
    NotConverged(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn structural(msg: impl Into<String>) -> Error {
    Error::Structural(msg.into())
}
