use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("row {row} sums to {sum}, not a probability vector")]
    NotProbabilities { row: usize, sum: f64 },
    #[error("{n} samples cannot fill {k} folds")]
    TooFewSamples { n: usize, k: usize },
    #[error("fold {fold} shares sample {index} between train and test")]
    Leak { fold: usize, index: usize },
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = MetricsError> = std::result::Result<T, E>;
