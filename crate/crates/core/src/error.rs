use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {layer}: expected {expected_w}x{expected_h}, found {found_w}x{found_h}")]
    DimensionMismatch {
        layer: String,
        expected_w: usize,
        expected_h: usize,
        found_w: usize,
        found_h: usize,
    },

    #[error("invalid {what}: {reason}")]
    Invalid { what: String, reason: String },

    #[error("{file}: field `{field}`: {reason}")]
    Malformed {
        file: PathBuf,
        field: String,
        reason: String,
    },

    #[error("{file}: field `{field}` references missing file {missing}")]
    MissingFile {
        file: PathBuf,
        field: String,
        missing: PathBuf,
    },

    #[error("{file}: duplicate frame id `{frame}` in scene `{scene}`")]
    DuplicateFrame {
        file: PathBuf,
        scene: String,
        frame: String,
    },

    #[error("RLE counts sum to {sum}, expected {expected}")]
    RleSumMismatch { sum: u64, expected: u64 },

    #[error("{path}: unsupported image format: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("prompt selects no segment")]
    EmptyPrompt,

    #[error("frame `{frame}` is missing {what}")]
    MissingFrameData { frame: String, what: String },

    #[error("no class has a nonzero union; mIoU is undefined")]
    UndefinedMiou,

    #[error("embedding grid has no populated cell")]
    EmptyGrid,

    #[error("no navigable cell{0}")]
    NoNavigable(String),

    #[error("invalid start cell ({x}, {y})")]
    InvalidStart { x: usize, y: usize },

    #[error("k = {k} exceeds the number of rows ({rows})")]
    TooManyClusters { k: usize, rows: usize },

    #[error("cluster index {index} out of range for k = {k}")]
    InvalidCluster { index: usize, k: usize },

    #[error("missing prerequisite: expected {0}")]
    MissingPrerequisite(PathBuf),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

impl Error {
    pub(crate) fn invalid(what: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Invalid {
            what: what.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }
}
