//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot normalize vector with norm {norm:e} (<= {eps:e})")]
    ZeroVector { norm: f64, eps: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("target class {target} out of range for {classes} classes")]
    TargetOutOfRange { target: usize, classes: usize },

    #[error(
        "invalid margin bounds: lower={lower}, upper={upper} (need 0 <= lower <= upper < pi/2)"
    )]
    InvalidBounds { lower: f64, upper: f64 },

    #[error("degenerate class-size range: n_min = n_max = {n} but lower != upper")]
    DegenerateRange { n: usize },

    #[error("empty class-count vector")]
    EmptyCounts,

    #[error("gallery has no rows")]
    EmptyGallery,

    #[error("empty neighbor list")]
    EmptyNeighbors,

    #[error("row count mismatch: {left} vs {right}")]
    RowCountMismatch { left: usize, right: usize },

    #[error("row {row} is not unit-norm (norm {norm})")]
    NonNormalizedInput { row: usize, norm: f64 },

    #[error("shape mismatch: {left_rows}x{left_cols} vs {right_rows}x{right_cols}")]
    ShapeMismatch {
        left_rows: usize,
        left_cols: usize,
        right_rows: usize,
        right_cols: usize,
    },

    #[error("model {model_id} has no head scores")]
    MissingHeadScores { model_id: String },

    #[error("unknown query id {0:?}")]
    UnknownQueryId(String),

    #[error("duplicate prediction for query id {0:?}")]
    DuplicatePrediction(String),

    #[error("invalid parameter: {0}")]
    InvalidParams(String),

    #[error("invalid fold count {0} (need k >= 2)")]
    InvalidK(usize),

    #[error("loss diverged at epoch {epoch} (loss = {loss})")]
    DivergedLoss { epoch: usize, loss: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("bad file format: {0}")]
    Format(String),
}
