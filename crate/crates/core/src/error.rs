use thiserror::Error;

/// Errors produced by the discretization, assembly and solver layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("element {element} is inverted: det J = {det:e} at quadrature point {point}")]
    MeshInversion {
        element: usize,
        point: usize,
        det: f64,
    },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error(
        "assembly refused: estimated {estimated_bytes} bytes exceeds the cap of {cap_bytes} bytes"
    )]
    MemoryCap {
        estimated_bytes: usize,
        cap_bytes: usize,
    },

    #[error("zero pivot in row {row} ({value:e})")]
    ZeroPivot { row: usize, value: f64 },

    #[error("matrix is not positive definite at row {row}")]
    NotPositiveDefinite { row: usize },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("solver did not converge: {0}")]
    NotConverged(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}

pub(crate) fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}
