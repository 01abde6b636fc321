//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Caller passed inconsistent or out-of-contract data.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A configuration value violates its invariant.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// The task file fails validation; each entry names field and rule.
    #[error("invalid task: {}", .0.join("; "))]
    TaskValidation(Vec<String>),

    /// RRT* exhausted its sample budget on one leg of the task.
    #[error("planning failed on leg {leg}: sample budget exhausted")]
    PlanningFailed { leg: usize },

    /// A path leg of zero length cannot carry interpolated timestamps.
    #[error("degenerate leg {leg}: zero arc length with distinct timestamps")]
    DegenerateLeg { leg: usize },

    /// A user-supplied function produced NaN during optimization.
    #[error("numerical failure in {0}: NaN encountered")]
    NumericalFailure(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}
