use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the simulator, detector emulation, analysis and pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value is outside its allowed domain.
    #[error("invalid configuration `{key}`: {reason}")]
    Config { key: String, reason: String },

    /// A caller broke an operation's precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    /// An estimator had no usable input (all samples invalid, no overlap, zero variance).
    #[error("empty result: {0}")]
    Empty(String),

    /// Requested trace storage exceeds the configured memory budget.
    #[error(
        "trace storage of {required} bytes exceeds the budget of {budget} bytes; \
         increase trace.dt_rec_s (decimation), shorten trace.duration_s or lower n_traj"
    )]
    MemoryBudget { required: u64, budget: u64 },

    /// Input artifacts required by a pipeline stage are absent.
    #[error("missing artifacts in {dir}: expected {}", expected.join(", "))]
    MissingArtifact { dir: PathBuf, expected: Vec<String> },

    /// A file does not match its documented schema.
    #[error("{path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn config(key: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
