use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: String, detail: String },

    #[error("non-finite value produced by node {node} ({label})")]
    NonFinite { node: usize, label: String },

    #[error("backward called before forward")]
    BackwardBeforeForward,

    #[error("loss node {label} is not a scalar (shape {shape:?})")]
    NotScalar { label: String, shape: Vec<usize> },

    #[error("missing value for input '{0}'")]
    MissingInput(String),

    #[error("unknown parameter '{0}'")]
    UnknownParam(String),

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("checkpoint format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn shape(op: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Shape {
            op: op.into(),
            detail: detail.into(),
        }
    }
}
