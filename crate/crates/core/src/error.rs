use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Malformed file content. `line` is 1-based; 0 means the file as a whole.
    #[error("{source_name}:{line}: {msg}")]
    Format {
        source_name: String,
        line: usize,
        msg: String,
    },

    #[error("degenerate vector: norm {0:e} is too small to normalize")]
    DegenerateVector(f64),

    #[error("too few shots: {have} available for k = {k}")]
    TooFewShots { have: usize, k: usize },

    #[error("cannot split: {0}")]
    CannotSplit(String),

    #[error("missing artifact: {}", .0.display())]
    MissingArtifact(PathBuf),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn format(source_name: impl Into<String>, line: usize, msg: impl Into<String>) -> Self {
        Error::Format {
            source_name: source_name.into(),
            line,
            msg: msg.into(),
        }
    }

    /// Process exit code used by the CLI: 2 format, 3 precondition, 4 missing artifact.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Format { .. } => 2,
            Error::InvalidInput(_)
            | Error::DegenerateVector(_)
            | Error::TooFewShots { .. }
            | Error::CannotSplit(_) => 3,
            Error::MissingArtifact(_) => 4,
            Error::Io(e) if e.kind() == std::io::ErrorKind::NotFound => 4,
            Error::Io(_) => 1,
        }
    }
}
