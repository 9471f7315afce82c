use serde_json::{json, Value};
use thiserror::Error;

/// Everything `nlfit` can fail with. Usage errors exit with 2, the rest with 1.
#[derive(Debug, Error)]
pub enum CliError {
    /// `--help` or `--version`; the text goes to stdout and the exit code is 0.
    #[error("{0}")]
    Help(String),

    #[error("{flag}: {message}")]
    Usage { flag: String, message: String },

    #[error("{0}")]
    Io(String),

    #[error("line {line}, column {column}: {message}")]
    Parse { line: u64, column: usize, message: String },

    #[error(transparent)]
    Compute(#[from] nlfit_core::Error),

    /// The report was written but the fit did not converge.
    #[error("fit did not converge (status: {0})")]
    NotConverged(String),
}

impl CliError {
    pub fn usage(flag: &str, message: impl Into<String>) -> Self {
        CliError::Usage {
            flag: flag.to_string(),
            message: message.into(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Help(_) => 0,
            CliError::Usage { .. } => 2,
            _ => 1,
        }
    }

    /// Machine-readable form written to stderr.
    pub fn to_json(&self) -> Value {
        let kind = match self {
            CliError::Help(_) => "help",
            CliError::Usage { .. } => "usage",
            CliError::Io(_) => "io",
            CliError::Parse { .. } => "parse",
            CliError::Compute(_) => "computation",
            CliError::NotConverged(_) => "not_converged",
        };
        let message = match self {
            CliError::Usage { message, .. } => message.clone(),
            other => other.to_string(),
        };
        let mut v = json!({ "error": kind, "message": message });
        match self {
            CliError::Usage { flag, .. } => v["flag"] = json!(flag),
            CliError::Parse { line, column, .. } => {
                v["line"] = json!(line);
                v["column"] = json!(column);
            }
            _ => {}
        }
        v
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
