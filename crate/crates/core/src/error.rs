use std::io;

use thiserror::Error;

pub type Result<T, E = HasError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum HasError {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dim { expected: usize, actual: usize },

    #[error("degenerate vector (norm {norm:e})")]
    DegenerateVector { norm: f64 },

    #[error("non-finite value at position {0}")]
    NonFinite(usize),

    #[error("index build failed: {0}")]
    Build(String),

    #[error("backend not ready: {0}")]
    NotReady(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("retrieval failed at query ordinal {ordinal}: {source}")]
    Retrieval {
        ordinal: usize,
        #[source]
        source: Box<HasError>,
    },

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl HasError {
    /// Process exit code used by the `has` binary.
    pub fn exit_code(&self) -> i32 {
        match self {
            HasError::Config(_) => 2,
            HasError::Data(_) | HasError::Dim { .. } | HasError::NonFinite(_) => 3,
            HasError::DegenerateVector { .. } => 3,
            HasError::Build(_)
            | HasError::NotReady(_)
            | HasError::Retrieval { .. }
            | HasError::Io(_) => 4,
        }
    }
}
