use thiserror::Error;

use crate::conic::SolveStatus;

/// Errors produced by the solver library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("model error: {0}")]
    Model(String),

    /// The second-stage problem has no feasible point (relatively complete
    /// recourse does not hold at this first-stage decision).
    #[error("recourse infeasible: {0}")]
    RecourseInfeasible(String),

    #[error("recourse problem is unbounded below: {0}")]
    RecourseUnbounded(String),

    /// The dual polyhedron {p >= 0 : B^T p <= z} is empty or unbounded.
    #[error("dual polyhedron is not a nonempty polytope: {0}")]
    DualPolyhedron(String),

    #[error("conic solve ended with status {status:?}: {detail}")]
    Solver { status: SolveStatus, detail: String },

    #[error("vertex enumeration limit exceeded ({0}); use constraint generation instead")]
    EnumerationCap(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn dim_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Dimension(msg.into()))
}
