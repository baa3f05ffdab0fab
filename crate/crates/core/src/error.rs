use std::path::PathBuf;

/// Errors produced by the engine.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected:?}, found {found:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("invalid image: {0}")]
    InvalidImage(String),
    #[error("non-finite value in `{0}`")]
    NonFinite(String),
    #[error("invalid `{field}`: {message}")]
    InvalidField { field: String, message: String },
    #[error("image is {width}x{height}, at least {min}x{min} is required")]
    ImageTooSmall {
        width: usize,
        height: usize,
        min: usize,
    },
    #[error("`{0}` has an alpha channel; only 3-channel RGB images are accepted")]
    AlphaChannel(String),
    #[error("layer {0} is bound to a spatial mask and cannot be baked into a LUT")]
    MaskBoundLayer(usize),
    #[error("degenerate least-squares basis (pivot {pivot} at column {column})")]
    DegenerateBasis { column: usize, pivot: f64 },
    #[error("non-finite gradient at iteration {0}")]
    NonFiniteGradient(usize),
    #[error("failed to read `{path}`: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("image codec error for `{path}`: {message}")]
    Codec { path: PathBuf, message: String },
    #[error("malformed recipe: {0}")]
    Json(#[from] serde_json::Error),
    #[error("cube file line {line}: {message}")]
    Cube { line: usize, message: String },
}

impl Error {
    pub(crate) fn field(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::InvalidField {
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

pub type Result<T, E = Error> = std::result::Result<T, E>;
