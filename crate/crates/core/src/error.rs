use std::path::PathBuf;

use thiserror::Error;

use crate::data::Domain;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("class {class} has {available} target samples, need at least {required}")]
    InsufficientTargetSamples {
        class: usize,
        available: usize,
        required: usize,
    },

    #[error("class {class} has no samples in the {pool} pool")]
    EmptyClassPool { class: usize, pool: &'static str },

    #[error("{pool} pool is empty")]
    EmptyPool { pool: &'static str },

    #[error("label {label} out of range for {num_classes} classes")]
    InvalidLabel { label: usize, num_classes: usize },

    #[error("sample {id} tagged {found:?} placed in the {pool} pool")]
    WrongDomain {
        id: u64,
        found: Domain,
        pool: &'static str,
    },

    #[error("sample {id} appears in both target train and target eval pools")]
    Leakage { id: u64 },

    #[error("invalid value for {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn parse(line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
