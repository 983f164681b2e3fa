use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by the engine. Variants are grouped by the category a
/// front end reports (structure, input/data, query, config, persistence).
#[derive(Debug, Error)]
pub enum PncError {
    #[error("invalid structure: {0}")]
    InvalidStructure(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error(
        "order violation: variable {marginalized} (rank {marginalized_rank}) is marginalized \
         but precedes evidence variable {evidence} (rank {evidence_rank})"
    )]
    OrderViolation {
        marginalized: usize,
        marginalized_rank: usize,
        evidence: usize,
        evidence_rank: usize,
    },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("format error at byte {offset}: {message}")]
    Format { offset: usize, message: String },

    #[error("config error at line {line}: {message}")]
    Config { line: usize, message: String },

    #[error("checksum mismatch: {0}")]
    Checksum(String),

    #[error("structure fingerprint mismatch: checkpoint {found}, expected {expected}")]
    FingerprintMismatch { expected: String, found: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl PncError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        PncError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(offset: usize, message: impl Into<String>) -> Self {
        PncError::Format {
            offset,
            message: message.into(),
        }
    }

    pub(crate) fn config(line: usize, message: impl Into<String>) -> Self {
        PncError::Config {
            line,
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, PncError>;
