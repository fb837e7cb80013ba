use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },
    /// A linear system was too ill-conditioned to trust, typically because the
    /// spectral parameter sits on the spectrum of the operator being inverted.
    #[error("{what} is numerically singular (condition {condition:.3e})")]
    Singular { what: String, condition: f64 },
    #[error("extensions are not relatively prime (stacked boundary rank {rank} < {needed})")]
    NotRelativelyPrime { rank: usize, needed: usize },
    #[error("numerical failure: {0}")]
    Numerical(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidInput(msg.into()))
}
