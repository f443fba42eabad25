use std::path::PathBuf;

use thiserror::Error;

use crate::losses::LossReport;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {field}: {reason}")]
    Config { field: &'static str, reason: String },

    #[error("shape mismatch in {context}: expected {expected:?}, got {actual:?}")]
    Shape {
        context: &'static str,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("arity mismatch in {context}: {reason}")]
    Arity { context: &'static str, reason: String },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("dangling manifest entries: {}", display_paths(.0))]
    DanglingEntries(Vec<PathBuf>),

    #[error("phase error: {0}")]
    Phase(String),

    #[error("{0} out of range")]
    Range(String),

    #[error("cannot compose objective: missing term `{0}`")]
    MissingTerm(&'static str),

    #[error("non-finite loss at step {step}: {report}")]
    NonFinite { step: u64, report: Box<LossReport> },

    #[error("checkpoint version {found} is not supported (expected {expected})")]
    Compatibility { found: u32, expected: u32 },

    #[error("checkpoint integrity check failed: {0}")]
    Integrity(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn config(field: &'static str, reason: impl Into<String>) -> Self {
        Error::Config {
            field,
            reason: reason.into(),
        }
    }

    pub(crate) fn shape(context: &'static str, expected: &[usize], actual: &[usize]) -> Self {
        Error::Shape {
            context,
            expected: expected.to_vec(),
            actual: actual.to_vec(),
        }
    }
}

fn display_paths(paths: &[PathBuf]) -> String {
    paths
        .iter()
        .map(|p| p.display().to_string())
        .collect::<Vec<_>>()
        .join(", ")
}
