use std::path::PathBuf;

/// Errors raised anywhere in the lab.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A configuration value violates an invariant.
    #[error("configuration error: {0}")]
    Config(String),

    /// A config file line could not be parsed.
    #[error("{path}:{line}: {msg}")]
    ConfigParse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    /// A caller broke an operation's precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    /// Training produced a non-finite loss or gradient.
    #[error("non-finite {what} at step {step}, group {group}")]
    NonFinite {
        what: &'static str,
        step: usize,
        group: usize,
        dump: String,
    },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// A metrics log or CSV could not be read.
    #[error("{path}:{line}: {msg}")]
    Log {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
