use thiserror::Error;

use crate::engine::GenerationResult;

/// Errors raised anywhere in the ensemble pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration: empty member list, zero weights, bad threshold.
    #[error("configuration error: {0}")]
    Config(String),

    /// A caller broke an operation's precondition (dimension mismatch,
    /// out-of-range token ID, invalid distribution).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Malformed input file. `line` is 1-based.
    #[error("{source_name}:{line}: {message}")]
    Parse {
        source_name: String,
        line: usize,
        message: String,
    },

    /// The backend could not be reached. Retriable.
    #[error("transport error: {0}")]
    Transport(String),

    /// The peer answered, but with something that violates the wire contract.
    #[error("protocol error: {0}")]
    Protocol(String),

    /// A remote peer reported an error code.
    #[error("remote error [{code}]: {message}")]
    Remote { code: String, message: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// Generation aborted mid-way; `partial` holds everything produced so far.
    #[error("generation aborted by member {member}: {source}")]
    Generation {
        member: String,
        #[source]
        source: Box<Error>,
        partial: Box<GenerationResult>,
    },
}

impl Error {
    pub(crate) fn parse(source_name: impl Into<String>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            source_name: source_name.into(),
            line,
            message: message.into(),
        }
    }

    /// True for failures where retrying the same request may succeed.
    pub fn is_retriable(&self) -> bool {
        matches!(self, Error::Transport(_))
    }

    /// Innermost error, looking through [`Error::Generation`].
    pub fn root(&self) -> &Error {
        match self {
            Error::Generation { source, .. } => source.root(),
            other => other,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
