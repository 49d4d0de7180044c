use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("cannot decode PNG {path}: {message}")]
    PngDecode { path: PathBuf, message: String },

    #[error("cannot encode PNG {path}: {message}")]
    PngEncode { path: PathBuf, message: String },

    #[error("unsupported PNG bit depth {depth} in {path}")]
    UnsupportedBitDepth { path: PathBuf, depth: u8 },

    #[error("unsupported PNG color type {color} in {path}")]
    UnsupportedColorType { path: PathBuf, color: String },

    #[error("bad magic in raw float file {path}: expected DNB1")]
    BadMagic { path: PathBuf },

    #[error("truncated raw float file {path}: expected {expected} bytes, found {actual}")]
    Truncated {
        path: PathBuf,
        expected: usize,
        actual: usize,
    },

    #[error("invalid image: {0}")]
    InvalidImage(String),

    #[error("image {width}x{height} is smaller than {required} in at least one dimension")]
    TooSmall {
        width: usize,
        height: usize,
        required: usize,
    },

    #[error("region {what} is out of bounds for {width}x{height} image")]
    OutOfBounds {
        what: String,
        width: usize,
        height: usize,
    },

    #[error("shape mismatch: {left} vs {right}")]
    ShapeMismatch { left: String, right: String },

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("external command exited with {status}: {stderr}")]
    ExternalExit { status: String, stderr: String },

    #[error("external command timed out after {seconds} s")]
    ExternalTimeout { seconds: f64 },

    #[error("external command produced no output file {path}")]
    ExternalMissingOutput { path: PathBuf },

    #[error("external output shape {actual} does not match input {expected}")]
    ExternalShapeMismatch { expected: String, actual: String },

    #[error("backend failed at {context}: {source}")]
    Backend {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("image sets differ: {0}")]
    ImageSetMismatch(String),

    #[error("no input images found in {0}")]
    EmptyInput(PathBuf),

    #[error("no eligible images: {0}")]
    NoEligibleImages(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Wraps a backend failure with where it happened (ensemble member, tile).
    pub fn tagged(self, context: impl Into<String>) -> Self {
        Error::Backend {
            context: context.into(),
            source: Box::new(self),
        }
    }
}
