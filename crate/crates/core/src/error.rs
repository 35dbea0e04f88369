use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("missing cell: area `{area}` has no row for period `{period}`")]
    MissingCell { area: String, period: String },

    #[error("duplicate cell: area `{area}`, period `{period}` appears more than once")]
    DuplicateCell { area: String, period: String },

    #[error("expected count must be positive (area `{area}`, period `{period}`, got {value})")]
    NonPositiveExpected { area: String, period: String, value: f64 },

    #[error("unknown area `{0}`")]
    UnknownArea(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("window covers all expected mass")]
    WindowCoversAll,

    #[error("infeasible constraints: {0}")]
    InfeasibleConstraints(String),

    #[error("non-finite linear predictor at cell {cell}")]
    NumericalOverflow { cell: usize },

    #[error("no convergence after {iterations} iterations: {detail}")]
    NoConvergence { iterations: usize, detail: String },

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("parse error in {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn parse(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.into(),
        }
    }

    /// True for failures of the numerics (as opposed to bad input or configuration).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NumericalOverflow { .. } | Error::NoConvergence { .. } | Error::NotPositiveDefinite(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
