use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Malformed file content. `offset` is a byte offset for binary formats and
    /// a 1-based line number for line-oriented text formats.
    #[error("{}: {msg} (at offset {offset})", path.display())]
    Format {
        path: PathBuf,
        offset: usize,
        msg: String,
    },

    #[error("missing file {}", path.display())]
    Missing { path: PathBuf },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("singular homography (|det| = {0:e})")]
    SingularHomography(f64),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("region rejected: {0}")]
    Rejected(String),

    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::Missing { path }
        } else {
            Error::Io { path, source }
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, offset: usize, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            offset,
            msg: msg.into(),
        }
    }

    /// True for errors caused by input files (missing, unreadable, malformed).
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Io { .. } | Error::Format { .. } | Error::Missing { .. } | Error::SingularHomography(_)
        )
    }
}
