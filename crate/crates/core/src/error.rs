use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("{0}")]
    InvalidArgument(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("image of {height}x{width} pixels cannot be split into {patch}x{patch} patches")]
    NotDivisible {
        height: usize,
        width: usize,
        patch: usize,
    },

    #[error("channel count {count} outside the supported range [1, {max}]")]
    ChannelCount { count: usize, max: usize },

    #[error("channel index {index} has no embedding slot (max channels {max})")]
    ChannelIndex { index: usize, max: usize },

    #[error("attention mask has no real tokens")]
    EmptyMask,

    #[error("layer {layer} out of range for depth {depth}")]
    LayerOutOfRange { layer: usize, depth: usize },

    #[error("embedding width mismatch: {left} vs {right}")]
    WidthMismatch { left: usize, right: usize },

    #[error("function is not deterministic: two evaluations gave {first} and {second}")]
    NonDeterministic { first: f64, second: f64 },

    #[error(transparent)]
    Mcif(#[from] crate::io::mcif::McifError),

    #[error(transparent)]
    Checkpoint(#[from] crate::io::checkpoint::CheckpointError),

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
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
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
