use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("row {0} has zero norm")]
    ZeroNormRow(usize),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("gallery size mismatch: memory holds {expected} gallery items, matrix has {got}")]
    GalleryMismatch { expected: usize, got: usize },

    #[error("non-finite input value")]
    NonFiniteInput,

    #[error("need at least 2 samples, got {0}")]
    InsufficientSamples(usize),

    #[error("invalid shape: {0}")]
    Shape(String),

    #[error("invalid k={k} for gallery of size {n_gallery}")]
    BadK { k: usize, n_gallery: usize },

    #[error("mean of counts is zero")]
    DegenerateMean,

    #[error("sum of counts is zero")]
    DegenerateSum,

    #[error("query {0} has no ground-truth match")]
    MissingGroundTruth(usize),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("unknown shift kind `{0}`")]
    UnknownKind(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("bad magic bytes {0:?}, expected \"HATV\"")]
    BadMagic([u8; 4]),

    #[error("unsupported format version {0}")]
    VersionUnsupported(u32),

    #[error("unsupported dtype code {0}")]
    DtypeUnsupported(u32),

    #[error("payload truncated: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: u64, found: u64 },

    #[error("payload has {0} trailing bytes")]
    TrailingBytes(u64),

    #[error("shape {n}x{t}x{d} overflows the addressable size")]
    ShapeOverflow { n: u64, t: u64, d: u64 },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{0}")]
    Parse(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
