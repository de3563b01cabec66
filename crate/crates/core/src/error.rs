//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: non-finite input value")]
    NonFinite { op: &'static str },

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("loss must be a scalar, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },

    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("unknown label: {0}")]
    UnknownLabel(String),

    #[error("label set error: {0}")]
    LabelSet(String),

    #[error("descriptor length mismatch: counts sum to {actual}, expected {expected}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("template error: {0}")]
    Template(String),

    #[error("routing error: {0}")]
    Routing(String),

    #[error("sequence length {length} exceeds budget {budget}")]
    SequenceOverflow { length: usize, budget: usize },

    #[error("invalid state: {0}")]
    State(String),

    #[error("quota for {task} is {requested} but only {available} samples available")]
    Quota {
        task: String,
        requested: usize,
        available: usize,
    },

    #[error("data error: {0}")]
    Data(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("training error: {0}")]
    Train(String),

    #[error("evaluation error: {0}")]
    Eval(String),

    #[error("generation error: {0}")]
    Generation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
