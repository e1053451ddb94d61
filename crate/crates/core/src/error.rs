use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("input contains NaN or infinite entries")]
    NonFiniteInput,

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("rank {k} out of bounds (valid range 1..={max})")]
    RankOutOfBounds { k: usize, max: usize },

    #[error("vector has zero norm")]
    ZeroVector,

    #[error("no token records match the selected kinds")]
    EmptySelection,

    #[error("degenerate concept: sigma_k = {sigma_k:e} is below 1e-12 * sigma_1 = {sigma_1:e}")]
    DegenerateConcept { sigma_k: f64, sigma_1: f64 },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite gradient or update at step {step} (learning rate too large?)")]
    NonFiniteGradient { step: usize },

    #[error("basis columns are not orthonormal (max deviation {deviation:e})")]
    NotOrthonormal { deviation: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("bad magic {found:?}, expected {expected:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported format version {0}")]
    VersionUnsupported(u32),

    #[error("unsupported dtype tag {0}")]
    DtypeUnsupported(u8),

    #[error("truncated payload: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: u64, found: u64 },

    #[error("{0} unexpected trailing bytes after payload")]
    TrailingData(u64),

    #[error("sidecar references row {row} but file has {rows} rows")]
    SidecarRowOutOfRange { row: usize, rows: usize },

    #[error("subspace bundle fails orthonormality check (deviation {deviation:e} > 1e-6)")]
    OrthonormalityViolation { deviation: f64 },

    #[error("invalid subspace bundle: {0}")]
    InvalidBundle(String),

    #[error("{0}: token metadata sidecar not found")]
    MissingSidecar(PathBuf),

    #[error("schema violation at `{path}`: {message}")]
    SchemaViolation { path: String, message: String },

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn schema(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::SchemaViolation {
            path: path.into(),
            message: message.into(),
        }
    }
}
