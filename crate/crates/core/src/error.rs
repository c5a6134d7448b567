use std::path::PathBuf;

/// Errors produced anywhere in the restoration stack.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{dimension} = {size} is not divisible by {factor} (2^levels)")]
    NotDivisible {
        dimension: &'static str,
        size: usize,
        factor: usize,
    },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("band layout mismatch: {0}")]
    LayoutMismatch(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("timestep {t} outside [{lo}, {hi}]")]
    TimestepOutOfRange { t: usize, lo: usize, hi: usize },
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("checkpoint version mismatch: expected {expected:?}, found {found:?}")]
    VersionMismatch { expected: String, found: String },
    #[error("missing artifact: {}", .0.display())]
    MissingArtifact(PathBuf),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("io error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("image error on {}: {source}", path.display())]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            return Error::MissingArtifact(path);
        }
        Error::Io { path, source }
    }
}
