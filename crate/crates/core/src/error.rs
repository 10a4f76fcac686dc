use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("unsupported JPEG variant: {0}")]
    UnsupportedVariant(String),
    #[error("malformed JPEG: {0}")]
    MalformedJpeg(String),
    #[error("unsupported geometry: {0}")]
    UnsupportedGeometry(String),
    #[error("infeasible payload: {0}")]
    InfeasiblePayload(String),
    #[error("solver did not converge: {0}")]
    NonConvergence(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("backward called before forward in {0}")]
    BackwardBeforeForward(&'static str),
    #[error("bad container: {0}")]
    Format(String),
    #[error("format version mismatch: expected {expected}, found {found}")]
    VersionMismatch { expected: u32, found: u32 },
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    /// Numeric failures (as opposed to bad data or bad usage).
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::NonConvergence(_) | Error::NonFinite(_))
    }
}
