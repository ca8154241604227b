use thiserror::Error;

/// Errors produced by the identification library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix has column rank {rank} < {cols} (QR diagonal below tolerance)")]
    RankDeficient { rank: usize, cols: usize },

    #[error("{what} did not converge within {iterations} iterations")]
    NoConvergence { what: &'static str, iterations: usize },

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("operator-norm target {target} unreachable for sampled system after {attempts} attempts")]
    InfeasibleTargets { target: f64, attempts: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("state became non-finite or exceeded 1e150 at t = {t}")]
    NonFiniteState { t: usize },

    #[error("middle-norm set is empty")]
    EmptyMiddleSet,

    #[error("node {node} retained {retained} samples, {required} required for stage II")]
    InsufficientRetained {
        node: usize,
        retained: usize,
        required: usize,
    },

    #[error("malformed input: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for failures of the numerical routines (as opposed to bad input or I/O).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::RankDeficient { .. }
                | Error::NoConvergence { .. }
                | Error::InfeasibleTargets { .. }
                | Error::NonFiniteState { .. }
                | Error::EmptyMiddleSet
                | Error::InsufficientRetained { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
