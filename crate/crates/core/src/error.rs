use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("index error: {0}")]
    Index(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("data error{}: {msg}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    Data { line: Option<usize>, msg: String },

    #[error("block {index}: {source}")]
    Block {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("internal error: {0}")]
    Internal(String),

    #[error("{path}: not a model artifact (bad magic bytes)")]
    BadMagic { path: PathBuf },

    #[error("{path}: unsupported artifact version {found} (expected {expected})")]
    Version {
        path: PathBuf,
        found: u8,
        expected: u8,
    },

    #[error("{path}: checksum mismatch (stored {stored:016x}, computed {computed:016x})")]
    Checksum {
        path: PathBuf,
        stored: u64,
        computed: u64,
    },

    #[error("{path}: artifact is missing its trailing checksum")]
    MissingChecksum { path: PathBuf },

    #[error("{path}: truncated artifact ({what})")]
    Truncated { path: PathBuf, what: String },

    #[error("{path}: malformed artifact ({what})")]
    Malformed { path: PathBuf, what: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn data(msg: impl Into<String>) -> Self {
        Error::Data {
            line: None,
            msg: msg.into(),
        }
    }

    pub(crate) fn data_at(line: usize, msg: impl Into<String>) -> Self {
        Error::Data {
            line: Some(line),
            msg: msg.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors raised while validating an artifact's framing or integrity.
    pub fn is_integrity(&self) -> bool {
        matches!(
            self,
            Error::BadMagic { .. }
                | Error::Version { .. }
                | Error::Checksum { .. }
                | Error::MissingChecksum { .. }
                | Error::Truncated { .. }
                | Error::Malformed { .. }
        )
    }
}
