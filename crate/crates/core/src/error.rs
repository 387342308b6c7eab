use thiserror::Error;

/// Errors raised across the crate.
///
/// The split between configuration and numerical failures is mirrored by the
/// CLI exit codes (2 and 3 respectively).
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid user input; `path` names the offending key (e.g. `sampler.lambda`).
    #[error("configuration error at `{path}`: {message}")]
    Config { path: String, message: String },

    /// A numerical operation broke down (non-SPD matrix, singular system, non-finite value).
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// Precondition on the arguments of an operation was violated.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }

    pub fn numerical(message: impl Into<String>) -> Self {
        Error::Numerical(message.into())
    }

    pub fn invalid(message: impl Into<String>) -> Self {
        Error::InvalidArgument(message.into())
    }

    /// Process exit status used by the command-line front end. Unreadable or
    /// unwritable paths count as configuration errors.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } | Error::InvalidArgument(_) | Error::Json(_) | Error::Io(_) => 2,
            Error::Numerical(_) => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
