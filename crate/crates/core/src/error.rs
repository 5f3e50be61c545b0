use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{context}: dimension mismatch, expected {expected:?}, found {found:?}")]
    DimensionMismatch {
        context: &'static str,
        expected: (usize, usize),
        found: (usize, usize),
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid QP: {0}")]
    InvalidQp(String),

    #[error("stacked control matrix of the constituent barriers is identically zero")]
    DegenerateControlMatrix,

    #[error("gain adaptation infeasible (h_p = {h_p:.3e}, |p^T Q D_k| = {coupling:.3e})")]
    AdaptationInfeasible { h_p: f64, coupling: f64 },

    #[error("gain adaptation QP hit its iteration cap")]
    AdaptationMaxIterations,

    #[error("{controller} infeasible for agent {agent}: {detail}")]
    ControlInfeasible {
        controller: String,
        agent: usize,
        detail: String,
    },

    #[error(transparent)]
    Config(#[from] ConfigError),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serialize(String),
}

/// Problems found while reading, overriding or validating a scenario.
#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("failed to parse {path}: {message}")]
    Parse { path: String, message: String },

    #[error("unknown override key `{0}`")]
    UnknownKey(String),

    #[error("malformed override `{0}` (expected key=value)")]
    MalformedOverride(String),

    #[error("unknown controller `{name}` (registered: {known})")]
    UnknownController { name: String, known: String },

    #[error("invalid scenario: {0}")]
    Invalid(String),
}

impl Error {
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_))
    }
}
