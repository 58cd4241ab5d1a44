use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("state vector has zero norm")]
    ZeroVector,
    #[error("domain error: {0}")]
    Domain(String),
    #[error("index {index} out of range for {len} settings")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("state is invisible to the protocol (all projection rates vanish)")]
    DegenerateState,
    #[error("dataset has already been corrected for accidental coincidences")]
    AlreadyCorrected,
    #[error("no counts: every setting recorded zero events")]
    NoCounts,
    #[error("grid is empty")]
    EmptyGrid,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("data mismatch: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}
