use thiserror::Error;

/// Errors raised anywhere in the detector pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("csv row {row}, column {column}: {message}")]
    CsvCell {
        row: usize,
        column: usize,
        message: String,
    },

    #[error("csv row {row}: expected {expected} columns, found {found}")]
    RaggedRow {
        row: usize,
        expected: usize,
        found: usize,
    },

    #[error("idx: {0}")]
    Idx(String),

    #[error("idx payload truncated: expected {expected} bytes, found {actual}")]
    IdxTruncated { expected: usize, actual: usize },

    #[error("calibration table: {0}")]
    CalibrationTable(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}

pub(crate) fn check_dim(expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, actual })
    }
}
