use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    Shape {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid configuration: {field}: {message}")]
    Config { field: String, message: String },

    #[error("training diverged: non-finite loss over batch of {batch} (max |td target| {max_target}, max |q| {max_q})")]
    Divergence {
        batch: usize,
        max_target: f64,
        max_q: f64,
    },

    #[error("not a probability distribution ({context}): {message}")]
    NotSimplex {
        context: &'static str,
        message: String,
    },

    #[error("invalid action {action} for agent {agent} (action set has {n_actions} entries)")]
    InvalidAction {
        agent: usize,
        action: usize,
        n_actions: usize,
    },

    #[error("checkpoint incompatible with environment: {0}")]
    Incompatible(String),

    #[error("unsupported schema version {found} in {what} (expected {expected})")]
    Schema {
        what: &'static str,
        found: u32,
        expected: u32,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by user-supplied configuration or files, as
    /// opposed to failures during a run.
    pub fn is_configuration(&self) -> bool {
        matches!(
            self,
            Error::Config { .. }
                | Error::Io { .. }
                | Error::Parse { .. }
                | Error::Schema { .. }
                | Error::Incompatible(_)
        )
    }
}

pub(crate) fn ensure_len(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::Shape {
            context,
            expected,
            actual,
        })
    }
}
