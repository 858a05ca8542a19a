use std::path::PathBuf;

/// Malformed MCDIFF01 container.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FormatError {
    #[error("bad magic, expected MCDIFF01")]
    BadMagic,
    #[error("file ends before the {0}")]
    Truncated(&'static str),
    #[error("invalid header: {0}")]
    Header(String),
    #[error("expected a {expected} container, found {found}")]
    WrongKind { expected: String, found: String },
    #[error("unsupported dtype {0}")]
    UnsupportedDtype(String),
    #[error("blob holds {found} bytes but the header declares {expected}")]
    BlobLength { expected: usize, found: usize },
    #[error("invalid PGM: {0}")]
    Pgm(String),
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{}: {source}", path.display())]
    Format { path: PathBuf, source: FormatError },
    #[error(transparent)]
    Core(#[from] mcdiff_core::Error),
    #[error("{}: {source}", path.display())]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("{0}")]
    Usage(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, source: FormatError) -> Self {
        Error::Format {
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
