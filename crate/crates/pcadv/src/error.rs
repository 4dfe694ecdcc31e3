//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A function received an argument outside its documented domain.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// An input value (point cloud, model, dataset) violates an invariant.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A configuration is internally inconsistent.
    #[error("configuration error: {0}")]
    Config(String),

    /// A non-finite value appeared during network evaluation.
    #[error("numeric failure in layer `{layer}`{context}")]
    Numeric { layer: String, context: String },

    /// A binary file failed to parse.
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: u64, message: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn invalid_argument(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn invalid_input(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub fn numeric(layer: impl Into<String>) -> Self {
        Error::Numeric {
            layer: layer.into(),
            context: String::new(),
        }
    }

    /// Attach attack loop coordinates to a numeric failure.
    pub fn with_attack_context(self, restart: usize, iteration: usize) -> Self {
        match self {
            Error::Numeric { layer, .. } => Error::Numeric {
                layer,
                context: format!(" (restart {restart}, iteration {iteration})"),
            },
            other => other,
        }
    }

    pub fn parse(offset: u64, message: impl Into<String>) -> Self {
        Error::Parse {
            offset,
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
