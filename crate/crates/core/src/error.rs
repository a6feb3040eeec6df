use alloc::string::String;

/// Errors produced by the engine, the data generators and the training methods.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    #[error("numeric domain violation in {op}: {detail}")]
    NumericDomain { op: &'static str, detail: String },

    #[error("invalid {field}: {detail}")]
    Validation { field: &'static str, detail: String },

    #[error("tape error: {0}")]
    Tape(String),

    #[error("optimizer state error: {0}")]
    State(String),

    #[error("non-finite value in loss term `{term}` of method {method}")]
    NonFinite { method: &'static str, term: &'static str },

    #[error("degenerate sample: {0}")]
    Degenerate(String),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

pub(crate) fn validation(field: &'static str, detail: impl Into<String>) -> Error {
    Error::Validation {
        field,
        detail: detail.into(),
    }
}

pub(crate) fn dimension(op: &'static str, detail: impl Into<String>) -> Error {
    Error::Dimension {
        op,
        detail: detail.into(),
    }
}
