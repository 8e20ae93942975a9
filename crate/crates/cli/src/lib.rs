pub mod app;
pub mod config;
mod error;
pub mod pipeline;

pub use app::{run, Cli, Command, Precision};
pub use config::{desk_student, EvalOptions, RunConfigFile};
pub use error::{CliError, Result};
