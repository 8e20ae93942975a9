use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error(transparent)]
    Autodiff(#[from] dceeg_autodiff::Error),
    #[error(transparent)]
    Signal(#[from] dceeg_signal::SignalError),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("template: {0}")]
    Template(String),
    #[error("token id {id} out of range for vocabulary of {size}")]
    TokenOutOfRange { id: usize, size: usize },
    #[error("non-finite activation in {layer}: {detail}")]
    NonFiniteActivation { layer: String, detail: String },
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("target {target} out of range for {classes} classes")]
    TargetOutOfRange { target: usize, classes: usize },
    #[error("not a probability row {row}: sums to {sum}")]
    NotProbabilities { row: usize, sum: f64 },
    #[error("model mismatch: {0}")]
    Mismatch(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = CoreError> = std::result::Result<T, E>;
