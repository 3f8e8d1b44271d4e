use thiserror::Error;

/// Errors produced by table construction, statistics, and estimation.
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty input: at least one observation is required")]
    EmptyInput,

    #[error("ragged rows: row {row} has {found} columns, expected {expected}")]
    RaggedRows {
        row: usize,
        found: usize,
        expected: usize,
    },

    #[error("non-binary cell value {value:?} at row {row}, column {col}")]
    NonBinaryValue { row: usize, col: usize, value: String },

    #[error("variable index {index} out of range 1..={max}")]
    VariableOutOfRange { index: usize, max: usize },

    #[error("variable subset must be nonempty and free of duplicates")]
    BadVariableSubset,

    #[error("variable count {j} outside supported range 1..=24")]
    UnsupportedVariableCount { j: usize },

    #[error("dimension mismatch: {context}")]
    DimensionMismatch { context: String },

    #[error("length mismatch: observed has {observed} cells, expected has {expected}")]
    LengthMismatch { observed: usize, expected: usize },

    #[error("impossible expected zero: cell {cell} has expected 0 but observed {observed}")]
    ImpossibleExpectedZero { cell: usize, observed: u64 },

    #[error("risk threshold {q} out of range 0..={j}")]
    RiskThresholdOutOfRange { q: usize, j: usize },

    #[error("class count must be at least 1")]
    BadClassCount,

    #[error("invalid statistic spec {token:?}: {reason}")]
    BadStatisticSpec { token: String, reason: String },

    #[error("statistic {name} has no model-based residual form; bootstrap does not support it")]
    UnsupportedResidualSpec { name: String },

    #[error("replicate values were not retained; rerun with retention enabled")]
    ReplicatesDiscarded,

    #[error("parse error in {path}: {reason}")]
    Parse { path: String, reason: String },

    #[error("unsupported generating class count {c_true}; expected 2 or 3")]
    UnsupportedCondition { c_true: usize },

    #[error("EM did not converge within {max_iters} iterations (best loglik {loglik})")]
    Nonconvergence { max_iters: usize, loglik: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
