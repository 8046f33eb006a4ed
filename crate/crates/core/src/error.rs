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

    #[error("malformed Y4M stream: {0}")]
    Format(String),

    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),

    #[error("truncated Y4M payload in frame {frame}: expected {expected} bytes, got {got}")]
    Truncated {
        frame: usize,
        expected: usize,
        got: usize,
    },

    #[error("image decode error on {path}: {message}")]
    Image { path: PathBuf, message: String },

    #[error("not found: {0}")]
    NotFound(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("layer index {index} out of range 1..={max}")]
    LayerIndex { index: usize, max: usize },

    #[error("degenerate (zero-norm) feature vector at frame {frame}")]
    DegenerateFeature { frame: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("adapter `{adapter}` lacks capability: {capability}")]
    Capability { adapter: String, capability: String },

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(String),

    #[error("missing grid cell: {0}")]
    MissingCell(String),

    #[error("feature alignment error: {0}")]
    Alignment(String),

    #[error("serialization error: {0}")]
    Serde(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
