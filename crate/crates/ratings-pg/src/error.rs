//! Crate-wide error type and exit-code mapping.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Invalid configuration or incompatible flag combination.
    #[error("config error: {0}")]
    Config(String),

    /// A data file line that could not be parsed at all.
    #[error("parse error at {path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    /// Parsed but semantically invalid data (unknown tokens, bad votes, ...).
    #[error("validation error: {0}")]
    Validation(String),

    /// Arguments outside a function's domain (empty slices, out-of-range values).
    #[error("domain error: {0}")]
    Domain(String),

    /// Non-finite numbers where finite ones are required.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Enumeration refused because the caption space is too large.
    #[error("size guard: {0}")]
    SizeGuard(String),

    /// Dataset generation could not satisfy its constraints.
    #[error("generation error: {0}")]
    Generation(String),

    /// Artifact/manifest mismatch between pipeline stages.
    #[error("manifest mismatch: {0}")]
    Manifest(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("json error on {path}: {source}")]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
}

impl Error {
    /// Process exit code for the CLI: 2 config, 3 data/schema, 4 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Parse { .. }
            | Error::Validation(_)
            | Error::Manifest(_)
            | Error::Io { .. }
            | Error::Json { .. } => 3,
            Error::Domain(_) | Error::Numeric(_) | Error::SizeGuard(_) | Error::Generation(_) => 4,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }
}
