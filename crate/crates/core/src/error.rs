use thiserror::Error;

/// Errors raised across the preimage pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// Caller passed arguments that violate an operation's preconditions.
    #[error("invalid input: {0}")]
    Input(String),

    /// A network or property file could not be parsed.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// A parsed object is structurally inconsistent.
    #[error("validation error: {0}")]
    Validation(String),

    /// The request exceeds a configured capability (dimension or neuron cap).
    #[error("capability exceeded: {0}")]
    Capability(String),

    #[error("refinement error: {0}")]
    Refinement(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: msg.into(),
        }
    }
}
