use thiserror::Error;

/// Errors surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: dimension mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("log of non-positive value {value} at index {index}")]
    LogDomain { value: f64, index: usize },

    #[error("matrix is not symmetric: max |a_ij - a_ji| = {deviation:.3e} exceeds {tolerance:.0e}")]
    NotSymmetric { deviation: f64, tolerance: f64 },

    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },

    #[error("empty time series: at least one step is required")]
    EmptySequence,

    #[error("unknown token id {id} for categorical field {field}")]
    OutOfVocabulary { field: usize, id: usize },

    #[error("unknown category {value:?} in field {field:?} (strict mode)")]
    UnknownCategory { field: String, value: String },

    #[error("line {line}: {message}")]
    DataFormat { line: u64, message: String },

    #[error("schema mismatch: checkpoint {expected:#018x} vs dataset {actual:#018x}")]
    SchemaMismatch { expected: u64, actual: u64 },

    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    Diverged { epoch: u32, loss: f64 },

    #[error("checkpoint format: {0}")]
    Checkpoint(String),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
