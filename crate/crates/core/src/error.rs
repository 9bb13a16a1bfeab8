use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("key generation failed: {0}")]
    KeyGeneration(String),

    #[error("ingestion error at record {index}: {reason}")]
    Ingestion { index: usize, reason: String },

    #[error("document {0} not found")]
    NotFound(u64),

    #[error("protocol error: {0}")]
    Protocol(String),

    /// A chosen oblivious-transfer message failed its verification tag.
    #[error("protocol corruption: verification tag mismatch at position {0}")]
    Corruption(usize),

    #[error("malformed message: {0}")]
    Malformed(String),

    #[error("session state error: {0}")]
    State(String),

    #[error("remote error {code}: {message}")]
    Remote { code: u16, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn protocol(msg: impl Into<String>) -> Self {
        Error::Protocol(msg.into())
    }

    pub(crate) fn malformed(msg: impl Into<String>) -> Self {
        Error::Malformed(msg.into())
    }
}
