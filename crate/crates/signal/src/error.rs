use thiserror::Error;

#[derive(Debug, Error)]
pub enum SignalError {
    #[error("invalid band {low_hz}-{high_hz} Hz at {sample_rate_hz} Hz sampling: {reason}")]
    InvalidBand {
        low_hz: f64,
        high_hz: f64,
        sample_rate_hz: f64,
        reason: &'static str,
    },
    #[error(
        "signal of {len} samples is too short for zero-phase filtering (needs more than {needed})"
    )]
    TooShort { len: usize, needed: usize },
    #[error("invalid recording: {0}")]
    InvalidRecording(String),
    #[error("invalid policy: {0}")]
    InvalidPolicy(String),
    #[error("no seizure epochs to balance against")]
    NoSeizureEpochs,
    #[error("format error: {0}")]
    Format(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = SignalError> = std::result::Result<T, E>;
