//! Shared error type for the whole laboratory.

use thiserror::Error;

/// Errors surfaced by the numerical operations.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument is outside the mathematical domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A profile failed validation or an operation received an invalid profile.
    #[error("profile error: {0}")]
    Profile(String),

    /// A stated precondition of a claim or diagnostic does not hold.
    #[error("precondition error: {0}")]
    Precondition(String),

    /// Geometry construction could not satisfy its invariants.
    #[error("geometry error: {0}")]
    Geometry(String),

    /// A linear or iterative solver failed to converge or is singular.
    #[error("solver error: {0}")]
    Solver(String),

    /// An operation was configured inconsistently.
    #[error("config error: {0}")]
    Config(String),

    /// The layered-bound hypothesis (per-layer sup below one) is violated.
    #[error("alpha error: {0}")]
    Alpha(String),

    /// Too few usable points for a least-squares fit.
    #[error("fit error: {0}")]
    Fit(String),

    /// The requested dimension is not supported by this operation.
    #[error("unsupported dimension: {0}")]
    UnsupportedDimension(String),

    /// The subharmonic construction has no feasible parameter at some shell.
    #[error("construction infeasible: {0}")]
    ConstructionInfeasible(String),

    /// Filesystem or serialization failure in the experiment driver.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// JSON (de)serialization failure.
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
