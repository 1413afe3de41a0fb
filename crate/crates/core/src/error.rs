use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("index ({row}, {col}) out of range for a {n_rows}x{n_cols} matrix")]
    IndexOutOfRange {
        row: usize,
        col: usize,
        n_rows: usize,
        n_cols: usize,
    },

    #[error("singular factor: non-positive diagonal at row {row}")]
    SingularFactor { row: usize },

    #[error("not positive definite: pivot {pivot} at row {row}")]
    NotPositiveDefinite { row: usize, pivot: f64 },

    #[error("matrix not SPD: p^T A p = {curvature} at iteration {iteration}")]
    NotSpd { iteration: usize, curvature: f64 },

    #[error("preconditioner not SPD: r^T z = {value} at iteration {iteration}")]
    PreconditionerNotSpd { iteration: usize, value: f64 },

    #[error("numerically singular: sigma_min = {sigma_min:e}")]
    NumericallySingular { sigma_min: f64 },

    #[error(
        "dense workspace of size {n} exceeds cap {cap} (set PRECONDNET_DENSE_CAP to override)"
    )]
    DenseCapExceeded { n: usize, cap: usize },

    #[error("matrix is not square ({n_rows}x{n_cols})")]
    NotSquare { n_rows: usize, n_cols: usize },

    #[error("non-positive diagonal entry {value} at row {row}")]
    NonPositiveDiagonal { row: usize, value: f64 },

    #[error("IC(0) breakdown persists after {attempts} diagonal shifts (last shift {shift:e})")]
    IcBreakdown { attempts: usize, shift: f64 },

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("non-finite gradient in tensor `{tensor}`")]
    NonFiniteGradient { tensor: String },

    #[error("shape mismatch in tensor `{tensor}`")]
    ShapeMismatch { tensor: String },

    #[error("sample {id}: {source}")]
    Sample {
        id: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("mismatched sample sets: {0}")]
    MismatchedSamples(String),

    #[error("method `learned` requires a model checkpoint (--model)")]
    MissingCheckpoint,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn parse(line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Attaches a sample id, unless the error already carries one.
    pub fn in_sample(self, id: usize) -> Self {
        match self {
            e @ Error::Sample { .. } => e,
            e => Error::Sample {
                id,
                source: Box::new(e),
            },
        }
    }
}
