use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("{path} is not valid JSON: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid configuration at `{key}`: {message}")]
    Schema { key: String, message: String },
    #[error("out of range: {0}")]
    Range(String),
    #[error("tree with {n_steps} steps and {d_prime} noise dimensions exceeds the size limit")]
    SizeExceeded { n_steps: usize, d_prime: usize },
    #[error("reports are not comparable: {0}")]
    IncompatibleReports(String),
    #[error("solver error: {0}")]
    Solver(#[from] bmdp_core::Error),
    #[error("cannot write {path}: {message}")]
    Write { path: PathBuf, message: String },
}

impl CliError {
    /// 1 for bad input, 3 for failures while solving or writing results.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Solver(_) | CliError::Write { .. } => 3,
            _ => 1,
        }
    }

    pub(crate) fn schema(key: impl Into<String>, message: impl Into<String>) -> Self {
        CliError::Schema {
            key: key.into(),
            message: message.into(),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
