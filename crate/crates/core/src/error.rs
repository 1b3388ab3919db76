use thiserror::Error;

/// Errors produced by the restoration core.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid dimensions: {0}")]
    InvalidDimensions(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid kernel: {0}")]
    InvalidKernel(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("solver diverged: {0}")]
    Diverged(String),

    #[error("patch {index}: {source}")]
    Patch {
        index: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// Wraps an error with the index of the patch that produced it.
    pub fn in_patch(self, index: usize) -> Self {
        Error::Patch {
            index,
            source: Box::new(self),
        }
    }

    /// True when the error (or the error it wraps) came from a numerical abort
    /// rather than bad input.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::Numerical(_) | Error::Diverged(_) => true,
            Error::Patch { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
