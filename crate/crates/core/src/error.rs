use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{file}:{line}: {message}")]
    Parse {
        file: String,
        line: usize,
        message: String,
    },

    #[error("validation failed: {0}")]
    Validation(String),

    /// A caller broke an operation's precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("training diverged at epoch {epoch}{}: {message}", batch.map(|b| format!(", batch {b}")).unwrap_or_default())]
    Divergence {
        epoch: usize,
        batch: Option<usize>,
        message: String,
    },

    #[error("artifact integrity error: {0}")]
    Integrity(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("missing artifact {path}: run stage `{stage}` first")]
    MissingArtifact { stage: String, path: PathBuf },

    #[error("stage `{stage}` artifacts were produced with config hash {found}, current is {expected}; pass --force to overwrite")]
    HashMismatch {
        stage: String,
        found: String,
        expected: String,
    },

    #[error("artifact directory {0} is locked by another run")]
    Locked(PathBuf),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
