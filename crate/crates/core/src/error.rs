use std::path::PathBuf;

use thiserror::Error;

/// Failures surfaced by a denoiser or codec backend.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("backend unavailable: {0}")]
    Unavailable(String),
    #[error("backend request timed out after {0} ms")]
    Timeout(u64),
    #[error("protocol version mismatch: expected {expected}, got {got}")]
    ProtocolVersion { expected: String, got: String },
    #[error("stale attention handle: {0}")]
    StaleKv(String),
    #[error("server error {status}: {message}")]
    Server { status: u16, message: String },
    #[error("malformed backend payload: {0}")]
    Malformed(String),
    #[error("attention export is not supported by the {0} backend")]
    KvUnsupported(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration `{field}`: {message}")]
    Config { field: String, message: String },
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("cannot recalculate noise at a noiseless step (t = {t}, alpha = {alpha})")]
    Singularity { t: usize, alpha: f64 },
    #[error("failed to parse {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("mesh has no UV atlas")]
    MissingUv,
    #[error("invalid mesh: {0}")]
    Mesh(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("image error: {0}")]
    Image(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("step {t}, view {view}: {source}")]
    AtStep {
        t: usize,
        view: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn contract(message: impl Into<String>) -> Self {
        Error::Contract(message.into())
    }

    pub(crate) fn at(self, t: usize, view: usize) -> Self {
        Error::AtStep {
            t,
            view,
            source: Box::new(self),
        }
    }

    /// The innermost error, skipping step/view context wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::AtStep { source, .. } => source.root(),
            other => other,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
