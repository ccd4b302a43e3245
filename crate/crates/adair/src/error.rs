use std::path::PathBuf;

/// Failures of the file formats and the command line.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("malformed image header: {0}")]
    MalformedHeader(String),
    #[error("image payload truncated: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: usize, found: usize },
    #[error("unsupported image format: {0}")]
    UnsupportedFormat(PathBuf),
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error("checkpoint does not match configuration: {0}")]
    ConfigMismatch(String),
    #[error("config line {line}: {message}")]
    Config { line: usize, message: String },
    #[error("manifest line {line}: {message}")]
    Manifest { line: usize, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Core(#[from] adair_core::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Attach the path to an IO failure.
pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
    let path = path.into();
    move |source| Error::Io { path, source }
}
