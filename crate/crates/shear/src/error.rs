//! Error type shared across the crate.

/// Convenience alias used by every fallible operation in this crate.
pub type Result<T> = std::result::Result<T, ShearError>;

/// Errors produced by the weighting pipeline and its supporting modules.
///
/// Variants are grouped by what the caller can do about them: malformed
/// inputs (`Manifest`, `Bounds`, `Validation`, `Lookup`, `Config`), shape
/// problems (`DimensionMismatch`), mathematically undefined requests
/// (`Degenerate`), resource guards (`Capacity`), and numerical breakdown
/// (`Numerical`). I/O and JSON errors pass through with context.
#[derive(Debug, thiserror::Error)]
pub enum ShearError {
    /// The corpus manifest is malformed (bad version, field, or layout).
    #[error("manifest error: {0}")]
    Manifest(String),

    /// An offset/length/index refers to data that does not exist.
    #[error("bounds error: {0}")]
    Bounds(String),

    /// Input values violate a documented precondition (e.g. non-finite data).
    #[error("validation error: {0}")]
    Validation(String),

    /// Two inputs that must share a dimension do not.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// The requested quantity is undefined for this input (zero vectors,
    /// constant ranks, empty sets, ...).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// A size guard tripped (e.g. the exact-matching replication cap).
    #[error("capacity exceeded: {0}")]
    Capacity(String),

    /// A configuration value is out of its legal range.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// An identifier could not be resolved.
    #[error("unknown id: {0}")]
    Lookup(String),

    /// A solver produced non-finite values or otherwise broke down.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// Underlying I/O failure; the message names the offending path.
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    /// JSON (de)serialization failure.
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl ShearError {
    /// Attach a path to a raw I/O error.
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        ShearError::Io {
            path: path.into(),
            source,
        }
    }
}
