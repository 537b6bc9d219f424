use std::path::PathBuf;

/// Errors produced by policy evaluation, training and the experiment harness.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Invalid configuration or mismatched dimensions.
    #[error("configuration error: {0}")]
    Config(String),
    /// An argument outside the domain of the operation.
    #[error("input error: {0}")]
    Input(String),
    /// A non-finite loss, gradient or parameter.
    #[error("numeric error: {0}")]
    Numeric(String),
    /// A rollout group was used with a policy other than the one that sampled it.
    #[error("on-policy violation: group sampled at snapshot {group}, policy is at {policy}")]
    StaleRollouts { group: u64, policy: u64 },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
}

impl Error {
    /// Process exit code for the CLI: 2 for configuration problems, 3 for numeric aborts.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Numeric(_) => 3,
            _ => 2,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
