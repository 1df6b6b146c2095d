use std::fmt;

/// Errors raised by the library. Variants are grouped by the module that
/// produces them; CLI-level failures wrap these with context via `anyhow`.
#[derive(Debug)]
pub enum Error {
    /// Cholesky pivot at `pivot` was not strictly positive.
    NotPositiveDefinite { pivot: usize, value: f64 },
    LengthMismatch { left: usize, right: usize },
    DegenerateInput(&'static str),
    Shape(String),
    InvalidArgument(String),
    EmptyCalibration,
    NonPositiveScale { channel: usize, value: f64 },
    ZeroSignal,
    InsufficientPoints { got: usize, need: usize },
    NoValidFit,
    IndexOutOfRange { index: usize, len: usize },
    DivergedTraining { step: usize },
    EmptyInput,
    InvalidConfig { field: String, message: String },
    Io(std::io::Error),
    Json(serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::NotPositiveDefinite { pivot, value } => {
                write!(f, "matrix is not positive definite (pivot {pivot} = {value:e})")
            }
            Error::LengthMismatch { left, right } => {
                write!(f, "length mismatch: {left} vs {right}")
            }
            Error::DegenerateInput(what) => write!(f, "degenerate input: {what}"),
            Error::Shape(msg) => write!(f, "shape error: {msg}"),
            Error::InvalidArgument(msg) => write!(f, "invalid argument: {msg}"),
            Error::EmptyCalibration => write!(f, "calibration set is empty"),
            Error::NonPositiveScale { channel, value } => {
                write!(f, "channel scale {channel} must be positive, got {value}")
            }
            Error::ZeroSignal => write!(f, "cannot set SNR relative to an all-zero feature"),
            Error::InsufficientPoints { got, need } => {
                write!(f, "need at least {need} points, got {got}")
            }
            Error::NoValidFit => write!(f, "no decreasing power law fits the data"),
            Error::IndexOutOfRange { index, len } => {
                write!(f, "index {index} out of range for length {len}")
            }
            Error::DivergedTraining { step } => {
                write!(f, "training diverged (non-finite loss) at step {step}")
            }
            Error::EmptyInput => write!(f, "no input records"),
            Error::InvalidConfig { field, message } => {
                write!(f, "invalid config field `{field}`: {message}")
            }
            Error::Io(e) => write!(f, "io error: {e}"),
            Error::Json(e) => write!(f, "json error: {e}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(e) => Some(e),
            Error::Json(e) => Some(e),
            _ => None,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Json(e)
    }
}
