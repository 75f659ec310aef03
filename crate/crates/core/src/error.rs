use std::io;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("parse error at byte offset {offset}: {message}")]
    Bytes { offset: usize, message: String },

    #[error("parse error on line {line}: {message}")]
    Line { line: usize, message: String },

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("non-finite state at round {round}{}", worker.map(|w| format!(" (worker {w})")).unwrap_or_default())]
    NonFinite { round: usize, worker: Option<usize> },

    #[error("solver stopped after {iterations} iterations with gradient norm {grad_norm:e}")]
    Solver { iterations: usize, grad_norm: f64 },

    /// A failure inside one run of a roster or sweep.
    #[error("{context}: {source}")]
    Run { context: String, source: Box<Error> },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
