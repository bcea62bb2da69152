use serde_json::json;
use thiserror::Error;
use whf_core::Error as CoreError;

#[derive(Debug, Error)]
pub enum CliError {
    /// Invalid or incomplete configuration (exit code 2).
    #[error("{0}")]
    Config(String),
    /// A solver or integrator failed (exit code 3).
    #[error("{0}")]
    Numerical(String),
    /// An artifact could not be written (exit code 1).
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Io(_) => 1,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Numerical(_) => "numerical",
            CliError::Io(_) => "io",
        }
    }

    /// Machine-readable error document.
    pub fn to_json(&self) -> String {
        json!({ "error": { "kind": self.kind(), "exit_code": self.exit_code(), "message": self.to_string() } })
            .to_string()
    }

    /// Classify a library error raised while handling `context`.
    pub fn from_core(context: &str, e: CoreError) -> Self {
        let message = format!("{context}: {e}");
        match e {
            CoreError::TimeOutOfRange { .. }
            | CoreError::NonFiniteState { .. }
            | CoreError::DegenerateSlope { .. }
            | CoreError::NotConverged { .. } => CliError::Numerical(message),
            _ => CliError::Config(message),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

/// Attach context to library results.
pub trait Context<T> {
    fn context(self, what: &str) -> Result<T, CliError>;
}

impl<T> Context<T> for whf_core::Result<T> {
    fn context(self, what: &str) -> Result<T, CliError> {
        self.map_err(|e| CliError::from_core(what, e))
    }
}
