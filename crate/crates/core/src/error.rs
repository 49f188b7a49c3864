use thiserror::Error;

use crate::channel::FrameError;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch { expected: Vec<usize>, actual: Vec<usize> },

    #[error("patch index {index} out of range (patch count {count})")]
    IndexOutOfRange { index: usize, count: usize },

    #[error("rectangle ({x0},{y0})-({x1},{y1}) does not fit a {width}x{height} image")]
    InvalidRect {
        x0: usize,
        y0: usize,
        x1: usize,
        y1: usize,
        width: usize,
        height: usize,
    },

    #[error("degenerate embedding: norm below 1e-12")]
    DegenerateEmbedding,

    #[error("empty patch set")]
    EmptyPatchSet,

    #[error("empty mask")]
    EmptyMask,

    #[error("probe training needs at least two classes")]
    SingleClass,

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("linear system is singular; increase the ridge coefficient")]
    SingularSystem,

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Frame(#[from] FrameError),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
