use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid image: {0}")]
    InvalidImage(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("expected a HU-offset CT image, got {0}")]
    NotCt(String),

    #[error("invalid window: width must be > 0, got {0}")]
    InvalidWindow(f64),

    #[error("annotation masks contain no lesion pixels")]
    EmptyAnnotation,

    #[error("no lesion patches match the requested types {0:?}")]
    EmptyFilteredBank(Vec<String>),

    #[error("patch {patch_w}x{patch_h} does not fit in base {base_w}x{base_h}")]
    PatchTooLarge {
        patch_w: usize,
        patch_h: usize,
        base_w: usize,
        base_h: usize,
    },

    #[error("patch placed at ({x}, {y}) exceeds the base raster bounds")]
    OutOfBounds { x: usize, y: usize },

    #[error("channel mismatch: {0}")]
    ChannelMismatch(String),

    #[error("score set: {0}")]
    InvalidScores(String),

    #[error("config field `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("unknown preset `{0}`")]
    UnknownPreset(String),

    #[error("{}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}", path.display())]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("{context}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },

    #[error("{context}")]
    Csv {
        context: String,
        #[source]
        source: csv::Error,
    },

    #[error("worker pool: {0}")]
    ThreadPool(String),
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
