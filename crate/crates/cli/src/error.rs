use larx_core::LarxError;
use serde_json::json;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("{path}, line {line}: {message}")]
    Csv { path: String, line: u64, message: String },
    #[error("config: {0}")]
    Config(String),
    #[error("{0} check(s) failed")]
    ChecksFailed(usize),
    #[error(transparent)]
    Core(#[from] LarxError),
}

impl CliError {
    pub fn code(&self) -> &'static str {
        match self {
            CliError::Io { .. } => "io",
            CliError::Csv { .. } => "csv",
            CliError::Config(_) => "config",
            CliError::ChecksFailed(_) => "check_failed",
            CliError::Core(e) => e.code(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::ChecksFailed(_) => 1,
            _ => 2,
        }
    }

    /// Machine-readable form written to stderr.
    pub fn to_json(&self) -> String {
        json!({"error": {"code": self.code(), "message": self.to_string()}}).to_string()
    }

    pub fn io(path: impl AsRef<std::path::Path>, e: impl std::fmt::Display) -> Self {
        CliError::Io { path: path.as_ref().display().to_string(), message: e.to_string() }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
