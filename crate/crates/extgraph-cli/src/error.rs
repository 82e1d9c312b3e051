//! CLI error type with machine-readable JSON rendering and exit codes.

use crate::studies::KNOWN_STUDIES;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("i/o error: {0}")]
    Io(String),
    #[error("parse error at line {line}")]
    Parse { line: usize },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("unknown study '{0}'")]
    UnknownStudy(String),
    #[error(transparent)]
    Model(#[from] extgraph::Error),
}

pub type Result<T> = std::result::Result<T, CliError>;

impl CliError {
    /// Single-line JSON payload; the last line written to stderr on failure.
    pub fn json(&self) -> String {
        let value = match self {
            CliError::Io(_) => serde_json::json!({ "kind": "io" }),
            CliError::Parse { line } => serde_json::json!({ "kind": "parse", "line": line }),
            CliError::Config(_) => serde_json::json!({ "kind": "config" }),
            CliError::UnknownStudy(_) => {
                serde_json::json!({ "kind": "study", "known": KNOWN_STUDIES })
            }
            CliError::Model(_) => serde_json::json!({ "kind": "model" }),
        };
        value.to_string()
    }
}

pub fn io_err(e: std::io::Error) -> CliError {
    CliError::Io(e.to_string())
}
