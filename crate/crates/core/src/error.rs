use alloc::string::String;

/// Errors raised by the core library.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NotScalar(alloc::vec::Vec<usize>),
    #[error("variable does not belong to this tape")]
    ForeignVar,
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("function is not deterministic: two evaluations differ ({first} vs {second})")]
    NonDeterministic { first: f64, second: f64 },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("sample {index}: could not place a camera after {attempts} attempts")]
    Infeasible { index: usize, attempts: usize },
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NanLoss { epoch: usize, batch: usize },
    #[error("empty split: {0}")]
    EmptySplit(String),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

pub(crate) fn shape_err(op: &'static str, detail: impl Into<String>) -> Error {
    Error::Shape { op, detail: detail.into() }
}
