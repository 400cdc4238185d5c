use std::path::PathBuf;

use thiserror::Error;

/// Crate-wide error type. Variants are coarse-grained by subsystem so callers
/// can match on the failure class while messages carry the specifics.
#[derive(Debug, Error)]
pub enum Error {
    /// Search-space construction or configuration lookup failed.
    #[error("invalid search space: {0}")]
    Space(String),

    /// A parameter value fell outside its declared bounds or had the wrong kind.
    #[error("invalid value for parameter `{param}`: {msg}")]
    Value { param: String, msg: String },

    /// Surrogate-model fitting or factorization failed.
    #[error("surrogate fit failed: {0}")]
    Surrogate(String),

    /// Network specification or simulator input failed validation.
    #[error("invalid simulator input: {0}")]
    Simulator(String),

    /// Early-stopping bookkeeping was fed inconsistent data.
    #[error("early-stop error: {0}")]
    EarlyStop(String),

    /// Optimizer state was driven outside its contract.
    #[error("optimizer error: {0}")]
    Optimizer(String),

    /// Scheduler or budget misconfiguration.
    #[error("scheduler error: {0}")]
    Scheduler(String),

    /// Experiment config file failed parsing or validation.
    #[error("invalid config: {0}")]
    Config(String),

    /// A trial-log line could not be parsed.
    #[error("log parse error: {0}")]
    LogParse(String),

    /// Filesystem failure, annotated with the offending path.
    #[error("io error on `{path}`: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
