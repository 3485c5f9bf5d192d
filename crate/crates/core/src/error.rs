//! Error taxonomy shared across the crate.

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor/shape disagreement between operands.
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// An argument is outside its allowed domain (e.g. kernel_size <= 0).
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    /// An operation was asked to run on data it is undefined for.
    #[error("domain error in {op}: {reason}")]
    Domain { op: &'static str, reason: String },

    /// A caller violated an API contract (e.g. non-scalar loss).
    #[error("contract violation in {op}: {reason}")]
    Contract { op: &'static str, reason: String },

    /// NaN or infinity appeared where a finite value is required.
    #[error("non-finite value in `{what}`")]
    NonFinite { what: String },

    /// A dataset line failed to parse.
    #[error("parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },

    /// Structural inconsistency between records or against a schema.
    #[error("schema error: {0}")]
    Schema(String),

    /// A value left its documented range.
    #[error("range error: field `{field}` of record `{record}` is {value}, expected {expected}")]
    Range {
        field: &'static str,
        record: String,
        value: f64,
        expected: &'static str,
    },

    /// Component dimensions cannot be wired together as configured.
    #[error("configuration error: {0}")]
    Config(String),

    /// The data cannot support the requested computation at all.
    #[error("degenerate data: {0}")]
    DegenerateData(String),

    /// A metric is undefined on this input (constant vector, N < 2, ...).
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    /// Missing parameter path in a ParamSet.
    #[error("unknown parameter path `{0}`")]
    UnknownParam(String),

    #[error("training aborted at epoch {epoch}, step {step}: {reason}")]
    TrainingAborted {
        epoch: usize,
        step: usize,
        reason: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
