use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Input outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("index {index} out of range for {bound} classes")]
    Index { index: usize, bound: usize },

    /// A caller broke an ordering or normalization contract.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("training diverged at iteration {iteration}: loss = {loss}")]
    Divergence { iteration: usize, loss: f64 },

    #[error("scoring failed for target image {index}: {source}")]
    Scoring {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("corrupt snapshot: {0}")]
    CorruptSnapshot(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(#[from] io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn shape(what: impl Into<String>) -> Self {
        Error::Shape(what.into())
    }

    pub(crate) fn domain(what: impl Into<String>) -> Self {
        Error::Domain(what.into())
    }

    /// Process exit code used by the CLI for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Domain(_) | Error::Contract(_) => 2,
            Error::Divergence { .. } | Error::NonFinite(_) => 3,
            Error::Io(_) | Error::CorruptSnapshot(_) | Error::Csv(_) => 4,
            Error::Scoring { source, .. } => source.exit_code(),
            Error::Shape(_) | Error::Index { .. } => 2,
        }
    }
}
