use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("token id {id} out of range for vocabulary of size {size}")]
    IdOutOfRange { id: usize, size: usize },

    #[error("variable does not belong to this tape")]
    Disconnected,

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("character {0:?} cannot be represented by the target vocabulary")]
    AlphabetMismatch(char),

    #[error("session {0} is not active")]
    SessionInactive(u64),

    #[error("invalid feedback position {position} (allowed {min}..={max})")]
    InvalidPosition { position: usize, min: usize, max: usize },

    #[error("invalid feedback: {0}")]
    InvalidFeedback(String),

    #[error("simulation exceeded {0} iterations without reaching the reference")]
    IterationCap(usize),

    #[error("training diverged at update {0}")]
    Diverged(usize),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
