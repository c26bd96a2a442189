//! Error type shared across the crate.
//!
//! Variants map onto the CLI exit-code contract: `Argument` and `Config` are
//! usage-class failures (exit 2), everything else is a runtime failure
//! (exit 1).

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SmileError {
    /// Caller passed a value outside an operation's domain.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// A numeric computation left the finite range or hit a degenerate
    /// input (zero-norm row, exploding loss, ...).
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// Internal consistency check failed on data that should have been
    /// impossible to construct through the public API.
    #[error("invariant violated: {0}")]
    Invariant(String),

    /// A data or config file could not be parsed.
    #[error("parse error in {file} (line {line}): {msg}")]
    Parse {
        file: String,
        line: usize,
        msg: String,
    },

    /// Filesystem-level failure, annotated with what was being done.
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    /// Bad training/run configuration (contradictory or unknown keys).
    #[error("config error: {0}")]
    Config(String),
}

impl SmileError {
    pub fn argument(msg: impl Into<String>) -> Self {
        SmileError::Argument(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        SmileError::Numeric(msg.into())
    }

    pub fn invariant(msg: impl Into<String>) -> Self {
        SmileError::Invariant(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        SmileError::Config(msg.into())
    }

    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        SmileError::Io {
            context: context.into(),
            source,
        }
    }

    /// True for failures that indicate the caller invoked us wrongly, as
    /// opposed to the run itself going wrong.
    pub fn is_usage(&self) -> bool {
        matches!(self, SmileError::Argument(_) | SmileError::Config(_))
    }
}

pub type Result<T> = std::result::Result<T, SmileError>;
