use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Arguments outside the documented domain of an operation.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Eigensolver failure or a filter that is unstable on the given spectrum.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// The requested search mode cannot be evaluated for this filter.
    #[error("unsupported mode: {0}")]
    UnsupportedMode(String),

    #[error("replication {index} (seed {seed}): {source}")]
    Replication {
        index: u64,
        seed: u64,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    /// Strips replication context to get at the underlying failure kind.
    pub fn root(&self) -> &Error {
        match self {
            Error::Replication { source, .. } => source.root(),
            other => other,
        }
    }
}
