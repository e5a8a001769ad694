use std::path::PathBuf;

/// Errors produced anywhere in the brightening pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("unsupported image format: {0}")]
    Format(String),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("crf channel {channel} is not strictly increasing at code {code}")]
    Monotonicity { channel: usize, code: usize },
    #[error("expected {expected} channel(s), got {actual}")]
    ChannelMismatch { expected: usize, actual: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid level count {levels} for a {width}x{height} image")]
    InvalidLevelCount {
        levels: usize,
        width: usize,
        height: usize,
    },
    #[error("operation requires a laplacian pyramid")]
    WrongKind,
    #[error("invalid radius {0}, must be at least 1")]
    InvalidRadius(usize),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("need at least {needed} images, got {got}")]
    InsufficientImages { needed: usize, got: usize },
    #[error("singular system: {0}")]
    SingularSystem(String),
    #[error("no usable case-2 pixels to fit the base-layer gain")]
    EmptyCase2,
    #[error("bad magic bytes {0:?}")]
    MagicMismatch([u8; 4]),
    #[error("unsupported weight file version {0}")]
    VersionUnsupported(u32),
    #[error("weights tagged {found:?} supplied for exposure {expected:?}")]
    TagMismatch { expected: String, found: String },
    #[error("layer shape chain broken: {0}")]
    ShapeChain(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
