//! Error type shared by every module in the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Shapes or lengths that must agree do not.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// Pixel data outside [0,1], NaN, or otherwise unusable.
    #[error("invalid image: {0}")]
    InvalidImage(String),

    /// A collection that must be non-empty is empty.
    #[error("empty input: {0}")]
    EmptyInput(String),

    /// A grid or prior was produced under a different codebook.
    #[error("codebook mismatch: expected {expected:#018x}, got {got:#018x}")]
    CodebookMismatch { expected: u64, got: u64 },

    /// Backend vocabulary does not agree with the grid's code range.
    #[error("vocabulary mismatch: {0}")]
    VocabularyMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A matcher produced an embedding with zero norm.
    #[error("zero-norm embedding: {0}")]
    ZeroNormEmbedding(String),

    /// Correlation is undefined when one input has no variance.
    #[error("zero variance in correlation input")]
    ZeroVariance,

    #[error("insufficient keywords: requested {requested}, caption has {available}")]
    InsufficientKeywords { requested: usize, available: usize },

    /// Clean and distorted sets do not share the same sample ids.
    #[error("id mismatch: {0}")]
    IdMismatch(String),

    #[error("manifest: {0}")]
    Manifest(String),

    /// A binary model file failed its magic, hash, or layout checks.
    #[error("file format: {0}")]
    Format(String),

    /// Failure reported by an estimator backend or matcher adapter.
    #[error("backend: {0}")]
    Backend(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
