use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("interval {t} is outside the trace horizon of {horizon} intervals")]
    Horizon { t: usize, horizon: usize },

    #[error("value {value} is outside the valid domain: {what}")]
    Domain { what: &'static str, value: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("cannot place vm {vm_id}: no host has enough capacity")]
    Placement { vm_id: usize },

    #[error("migration plan rejected: {0}")]
    Plan(String),

    #[error("component generation failed: {0}")]
    Generation(String),

    #[error("trace {path}: {message}")]
    Trace { path: PathBuf, message: String },

    #[error("trace {path} line {line}: {message}")]
    TraceParse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("statistics: {0}")]
    Statistics(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("unknown {kind} `{name}` (known: {known})")]
    UnknownStrategy {
        kind: &'static str,
        name: String,
        known: String,
    },

    #[error("interval {t}: {source}")]
    AtInterval {
        t: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by user input (config files, flags, trace
    /// paths) rather than by the simulation itself.
    pub fn is_config_error(&self) -> bool {
        match self {
            Error::Config(_)
            | Error::UnknownStrategy { .. }
            | Error::Trace { .. }
            | Error::TraceParse { .. } => true,
            Error::Io { source, .. } => source.kind() == std::io::ErrorKind::NotFound,
            Error::AtInterval { source, .. } => source.is_config_error(),
            _ => false,
        }
    }
}
