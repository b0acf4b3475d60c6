use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by every layer of the simulator.
#[derive(Debug, Error)]
pub enum Error {
    /// Shapes, layouts or parameters that do not fit together.
    #[error("configuration error: {0}")]
    Config(String),

    /// Input data that violates a precondition (bad label, bad cell, too few rows).
    #[error("data error: {0}")]
    Data(String),

    #[error("dataset is empty")]
    EmptyDataset,

    /// A text file that could not be parsed, with the 1-based line number.
    #[error("{}:{line}: {msg}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

pub(crate) fn data_err(msg: impl Into<String>) -> Error {
    Error::Data(msg.into())
}
