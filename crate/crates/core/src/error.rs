use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// An argument fell outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("point at the origin has no direction (norm {0:e})")]
    DegenerateOrigin(f64),

    #[error("conditional slice has total mass {0:e}")]
    DegenerateConditional(f64),

    #[error("circular correlation undefined: {0}")]
    UndefinedCorrelation(String),

    /// An operation was called in a model configuration it does not support.
    #[error("contract violation: {0}")]
    Contract(String),

    /// The chain left the parameter space (non-finite or non-positive values).
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("csv: {0}")]
    Csv(String),

    #[error("io: {0}")]
    Io(String),
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Csv(e.to_string())
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
