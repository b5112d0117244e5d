use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),
    #[error("degenerate motion: {0}")]
    DegenerateMotion(String),
    #[error("numerical failure: {0}")]
    NumericalFailure(String),
    #[error("prior has {0} states, more than a two-byte state id can address")]
    IdWidthOverflow(usize),
    #[error("corrupt stream: {0}")]
    CorruptStream(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Stable, machine-readable name of the error class.
    pub fn class(&self) -> &'static str {
        match self {
            Error::InvalidInput(_) => "InvalidInput",
            Error::DegenerateGeometry(_) => "DegenerateGeometry",
            Error::DegenerateMotion(_) => "DegenerateMotion",
            Error::NumericalFailure(_) => "NumericalFailure",
            Error::IdWidthOverflow(_) => "IdWidthOverflow",
            Error::CorruptStream(_) => "CorruptStream",
            Error::Io(_) => "Io",
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
