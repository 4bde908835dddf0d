use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("probability matrix is empty")]
    Empty,
    #[error("row {row} has {found} entries, expected {expected}")]
    Ragged {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("entry ({row}, {col}) is not finite")]
    NonFinite { row: usize, col: usize },
    #[error("entry ({row}, {col}) is negative: {value}")]
    NegativeProbability { row: usize, col: usize, value: f64 },
    #[error("probability matrix has zero total mass")]
    ZeroMass,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: String, found: String },
    #[error("delta = {delta} outside (0, 1/{size})")]
    DeltaOutOfRange { size: usize, delta: f64 },
    #[error("metric vanishes at supported pair ({x}, {y})")]
    IncompatibleMetric { x: usize, y: usize },
    #[error("optimizer did not converge: {0}")]
    NotConverged(String),
    #[error("blocklength n = {n} too large: {count} sequences exceeds limit {limit}")]
    BlocklengthTooLarge { n: usize, count: u128, limit: u128 },
    #[error("exact enumeration infeasible at n = {n}: {count} sequences exceeds limit {limit}")]
    EnumerationTooLarge { n: usize, count: u128, limit: u128 },
    #[error("expurgation left {remaining} sequences unassigned after {rounds} rounds")]
    IterationBudgetExceeded { rounds: usize, remaining: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("malformed JSON: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
