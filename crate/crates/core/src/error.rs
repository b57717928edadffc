use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum TrapError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("geometry construction failed: {0}")]
    Geometry(String),
    #[error("point ({x:.6e}, {y:.6e}, {z:.6e}) is outside the solver domain")]
    OutOfDomain { x: f64, y: f64, z: f64 },
    #[error("point is a saddle, not a minimum (eigenvalues {0:?})")]
    SaddleNotMinimum([f64; 3]),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("no solution: {0}")]
    NoSolution(String),
    #[error("integration failed: {0}")]
    Integration(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl From<serde_json::Error> for TrapError {
    fn from(e: serde_json::Error) -> Self {
        if e.is_io() {
            TrapError::Io(std::io::Error::other(e))
        } else {
            TrapError::Parse(e.to_string())
        }
    }
}

impl From<csv::Error> for TrapError {
    fn from(e: csv::Error) -> Self {
        if e.is_io_error() {
            match e.into_kind() {
                csv::ErrorKind::Io(io) => TrapError::Io(io),
                other => TrapError::Parse(format!("{other:?}")),
            }
        } else {
            TrapError::Parse(e.to_string())
        }
    }
}

pub type Result<T> = std::result::Result<T, TrapError>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(TrapError::InvalidParameter(msg.into()))
}
