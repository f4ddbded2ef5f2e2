use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed JSON in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("PLY error: {0}")]
    Ply(String),

    #[error("image error on {path}: {message}")]
    Image { path: PathBuf, message: String },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("dimension mismatch: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),

    #[error("degenerate configuration: {0}")]
    Degenerate(String),

    #[error("no 2D-3D matches supplied")]
    NoMatches,

    #[error("no finite residuals: every match projects behind its camera")]
    NonFiniteResidual,

    #[error("point cloud is empty")]
    EmptyCloud,

    #[error("invalid downsample fraction {0}; expected 0 < fraction <= 1")]
    InvalidFraction(f64),

    #[error("non-finite loss at iteration {iteration} (view {view}); snapshot written to {snapshot:?}")]
    NonFiniteLoss { iteration: usize, view: String, snapshot: Option<PathBuf> },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io { path: path.into(), source }
    }

    pub fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Self::Json { path: path.into(), source }
    }
}
