//! Crate-wide error type.

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Tensor or parameter-vector dimensions do not line up.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A caller-supplied value is out of its documented range.
    #[error("invalid argument: {0}")]
    InvalidArg(String),

    /// Run-level configuration is inconsistent or incomplete.
    #[error("config error: {0}")]
    Config(String),

    /// An internal invariant that should hold for any valid input was
    /// violated at runtime.
    #[error("invariant violated: {0}")]
    Invariant(String),

    /// Malformed input file; `line` is 1-based and counts the header.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Process exit code for the CLI: 1 config, 2 invariant, 3 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidArg(_) | Error::Parse { .. } => 1,
            Error::Shape(_) | Error::Invariant(_) => 2,
            Error::Io(_) | Error::Json(_) | Error::Csv(_) => 3,
        }
    }
}
