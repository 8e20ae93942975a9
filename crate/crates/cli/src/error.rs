use dceeg_core::CoreError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error(transparent)]
    Signal(#[from] dceeg_signal::SignalError),
    #[error(transparent)]
    Metrics(#[from] dceeg_metrics::MetricsError),
    #[error(transparent)]
    Autodiff(#[from] dceeg_autodiff::Error),
    #[error("{path}: {source}")]
    File {
        path: String,
        source: std::io::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CliError {
    /// 2 for bad invocations or configs, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Core(CoreError::Config(_) | CoreError::Template(_)) => 2,
            CliError::Signal(
                dceeg_signal::SignalError::InvalidPolicy(_)
                | dceeg_signal::SignalError::InvalidBand { .. },
            ) => 2,
            _ => 1,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Core(_) => "model",
            CliError::Signal(_) => "signal",
            CliError::Metrics(_) => "metrics",
            CliError::Autodiff(_) => "autodiff",
            CliError::File { .. } | CliError::Io(_) => "io",
            CliError::Json(_) => "json",
        }
    }

    /// One-line JSON record for stderr.
    pub fn to_json(&self) -> String {
        serde_json::json!({ "error": self.kind(), "message": self.to_string(), "exit_code": self.exit_code() }).to_string()
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

pub fn file_error(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::File {
        path: path.display().to_string(),
        source,
    }
}
