//! Shared error type for the whole crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error at line {line}: {msg}")]
    Csv { line: usize, msg: String },
    #[error("data contract violation at line {line}: {msg}")]
    DataContract { line: usize, msg: String },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("design matrix is rank deficient")]
    RankDeficient,
    #[error("perfect separation detected (coefficient {column} diverged)")]
    Separation { column: usize },
    #[error("no convergence after {iterations} iterations")]
    NonConvergence { iterations: usize },
    #[error("column {column} has zero variance")]
    ZeroVariance { column: usize },
    #[error("zero estimated variance for coefficient {index}")]
    ZeroCoefficientVariance { index: usize },
    #[error("all kernel weights vanish at evaluation point {point:?}")]
    Extrapolation { point: Vec<f64> },
    #[error("substitution too weak: |pi_T(1,x) - pi_T(0,x)| = {gap:e} below tolerance")]
    WeakSubstitution { gap: f64 },
    #[error("degenerate denominator ({value:e})")]
    DegenerateDenominator { value: f64 },
    #[error("weights must sum to zero, got {sum:e}")]
    WeightsNotZeroSum { sum: f64 },
    #[error("survival ordering violated: pi_T <= pi_C in v={v} cell")]
    SurvivalOrdering { v: u8 },
    #[error("empty conditioning cell: {0}")]
    EmptyCell(String),
    #[error("nuisance function {name} unavailable: {reason}")]
    NuisanceUnavailable { name: &'static str, reason: String },
    #[error("not identifiable: {0}")]
    NotIdentifiable(String),
    #[error("estimate on probability boundary: {0}")]
    BoundaryEstimate(String),
    #[error("score not at a root (mean score norm {norm:e})")]
    ScoreNotAtRoot { norm: f64 },
    #[error("singular jacobian of the mean score")]
    SingularJacobian,
    #[error("bootstrap too fragile: only {used} of {total} replicates succeeded")]
    BootstrapFragile { used: usize, total: usize },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// True for errors caused by malformed or inadequate input data, as
    /// opposed to failures arising during estimation.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Io(_) | Error::Csv { .. } | Error::DataContract { .. } | Error::InvalidInput(_)
        )
    }
}
