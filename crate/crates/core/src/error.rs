use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = DpvsError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum DpvsError {
    #[error("invalid model layout: {0}")]
    InvalidLayout(String),

    #[error("layout mismatch: expected {expected} parameters, got {actual}")]
    LayoutMismatch { expected: usize, actual: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid partition scheme: {0}")]
    InvalidScheme(String),

    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("ledger: {0}")]
    Ledger(String),

    #[error("sample index {index} out of range (ledger holds {len} samples)")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("utility table incomplete: {0}")]
    IncompleteTable(String),

    #[error("too many clients ({n}) for {what}; limit is {limit}")]
    TooManyClients {
        n: usize,
        limit: usize,
        what: &'static str,
    },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("round {round}")]
    Round {
        round: usize,
        #[source]
        source: Box<DpvsError>,
    },

    #[error("{}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}", path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl DpvsError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        DpvsError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn in_round(self, round: usize) -> Self {
        DpvsError::Round {
            round,
            source: Box::new(self),
        }
    }
}
