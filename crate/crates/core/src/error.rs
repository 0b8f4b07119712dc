use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: bad magic {found:?}, expected \"FMAP\"")]
    BadMagic { path: PathBuf, found: [u8; 4] },
    #[error("{path}: unsupported format version {found}")]
    UnsupportedVersion { path: PathBuf, found: u32 },
    #[error("{path}: truncated payload, expected {expected} bytes, found {found}")]
    Truncated {
        path: PathBuf,
        expected: usize,
        found: usize,
    },
    #[error("tensor contains a non-finite value at flat index {index}")]
    NonFinite { index: usize },
    #[error("invalid shape: {0}")]
    Shape(String),
    #[error("kept channel set is empty")]
    EmptyKeptSet,
    #[error("channel {index} out of range for {channels} channels")]
    ChannelOutOfRange { index: usize, channels: usize },
    #[error("need at least {needed} {what}, found {found}")]
    TooFew {
        what: &'static str,
        needed: usize,
        found: usize,
    },
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("duplicate manifest id {0:?}")]
    DuplicateId(String),
    #[error("metric ground truth requires a position for entry {0:?}")]
    MissingPosition(String),
    #[error("{path}: malformed document: {message}")]
    Document { path: PathBuf, message: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("reference index {index} out of range for {len} references")]
    ReferenceOutOfRange { index: usize, len: usize },
    #[error("no negative candidates outside radius {radius} of reference {index} ({len} references)")]
    NoNegativeCandidates {
        index: usize,
        radius: usize,
        len: usize,
    },
    #[error("ground-truth mode mismatch: config is {config}, truth is {truth}")]
    GtModeMismatch {
        config: &'static str,
        truth: &'static str,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn document(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        Error::Document {
            path: path.into(),
            message: message.to_string(),
        }
    }
}
