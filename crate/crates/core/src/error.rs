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

    #[error("{file}:{line}: {msg}")]
    Parse {
        file: String,
        line: usize,
        msg: String,
    },

    #[error("bad binary format in {what}: {msg}")]
    Format { what: String, msg: String },

    #[error("dangling reference: {0}")]
    DanglingReference(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("unknown outfit id {0}")]
    UnknownOutfit(u64),

    #[error("unknown user id {0}")]
    UnknownUser(u64),

    #[error("non-finite loss at epoch {epoch}, batch {batch} (l_rec={l_rec}, l_comp={l_comp}); parameter norms: {norms}")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        l_rec: f64,
        l_comp: f64,
        norms: String,
    },

    #[error("empty input: {0}")]
    Empty(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Whether the error stems from bad input data or configuration, as
    /// opposed to a failure while running a stage.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. }
                | Error::Format { .. }
                | Error::DanglingReference(_)
                | Error::DimensionMismatch(_)
                | Error::InvalidDataset(_)
                | Error::InvalidConfig(_)
                | Error::UnknownOutfit(_)
                | Error::UnknownUser(_)
                | Error::Io { .. }
        )
    }
}
