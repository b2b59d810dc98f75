use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the simulation, estimation and evaluation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid camera parameters: {0}")]
    InvalidCamera(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("dimension mismatch: expected {expected:?}, got {got:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("no valid pixels in {0}")]
    EmptyValidRegion(&'static str),
    #[error("unknown kernel family `{0}`")]
    UnknownKernelFamily(String),
    #[error("image of {width}x{height} is smaller than the {window}x{window} descriptor window")]
    ImageTooSmall {
        width: usize,
        height: usize,
        window: usize,
    },
    #[error("singular normal equations: {0}")]
    Singular(String),
    #[error("missing view `{view}` in {dir}")]
    MissingView { view: &'static str, dir: PathBuf },
    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("image codec error on {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("json error on {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error(
        "scene sets differ: only in predictions {only_pred:?}, only in ground truth {only_gt:?}"
    )]
    SceneMismatch {
        only_pred: Vec<String>,
        only_gt: Vec<String>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
