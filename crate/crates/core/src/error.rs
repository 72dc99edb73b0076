use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected:?}, found {found:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("entry ({row}, {col}) is not strictly positive: {value}")]
    NonPositiveEntry { row: usize, col: usize, value: f64 },
    #[error("support violation at ({row}, {col}): p > 0 but q = 0")]
    SupportViolation { row: usize, col: usize },
    #[error("{} cell(s) have zero counts", cells.len())]
    ZeroCount { cells: Vec<(usize, usize)> },
    #[error("coordinate ({x}, {y}) lies outside [0, 1]^2")]
    CoordinateOutOfRange { x: f64, y: f64 },
    #[error("invalid parameters: {0}")]
    InvalidParameters(String),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("grid of size {rows}x{cols} exceeds the oracle limit of {limit}x{limit}")]
    SizeLimit {
        rows: usize,
        cols: usize,
        limit: usize,
    },
    #[error("quadrature failed: {0}")]
    QuadratureFailure(String),
    #[error("degenerate regression: {0}")]
    DegenerateRegression(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
