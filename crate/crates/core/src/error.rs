use alloc::string::String;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("field {field}: category index {index} out of range (cardinality {cardinality})")]
    CategoryOutOfRange {
        field: usize,
        index: usize,
        cardinality: usize,
    },
    #[error("instance does not match schema: {0}")]
    SchemaMismatch(String),
    #[error("invalid schema: {0}")]
    InvalidSchema(String),
    #[error("non-positive input {value} to the logarithmic layer at ({row}, {col})")]
    NonPositive { row: usize, col: usize, value: f64 },
    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("batch normalization in train mode needs at least 2 rows, got {0}")]
    BatchTooSmall(usize),
    #[error("split ratios must be non-negative and sum to 1, got {0}")]
    InvalidRatios(f64),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("AUC needs at least one positive and one negative label")]
    SingleClass,
    #[error("max order must satisfy 2 <= n <= {fields}, got {order}")]
    MaxOrder { order: usize, fields: usize },
    #[error("snapshots disagree on the logarithmic layer shape")]
    InconsistentSnapshots,
    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: u64 },
    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T> = core::result::Result<T, Error>;
