use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimensions: {0}")]
    InvalidDimensions(String),

    #[error("wavelengths must be strictly increasing and finite (offending index {index})")]
    Wavelength { index: usize },

    #[error("non-finite value in {what} at index {index}")]
    NonFinite { what: &'static str, index: usize },

    #[error("{what} index {index} out of range (len {len})")]
    OutOfRange {
        what: &'static str,
        index: usize,
        len: usize,
    },

    #[error("shape mismatch: expected {expected}, found {found}")]
    ShapeMismatch { expected: String, found: String },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// Denominator of the data step vanished at these measurement pixels `(row, col)`.
    #[error("degenerate data-step denominator at {} pixel(s), first {:?}", .coords.len(), .coords.first())]
    DegeneratePixels { coords: Vec<(usize, usize)> },

    #[error("prior failed at t={t}{}: {message}", .band.map(|b| format!(", band {b}")).unwrap_or_default())]
    Prior {
        t: usize,
        band: Option<usize>,
        message: String,
    },

    #[error("external prior: {0}")]
    External(String),

    #[error("numerical abort at step {step} (t={t}): non-finite iterate")]
    NumericalAbort { step: usize, t: usize },

    #[error("pearson correlation undefined: zero-variance curve")]
    UndefinedCorrelation,

    #[error("format error: {0}")]
    Format(String),

    #[error("truncated file: expected {expected} bytes, found {actual}")]
    Truncated { expected: u64, actual: u64 },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn shape(expected: impl ToString, found: impl ToString) -> Self {
        Error::ShapeMismatch {
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }

    /// Process exit code for the command-line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io(_) | Error::Format(_) | Error::Truncated { .. } => 3,
            Error::NumericalAbort { .. } | Error::DegeneratePixels { .. } => 4,
            Error::External(_) | Error::Prior { .. } => 5,
            _ => 2,
        }
    }
}
