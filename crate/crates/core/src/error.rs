use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the quality-gate pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("sequence too short: need at least {needed} samples, got {got}")]
    Length { needed: usize, got: usize },

    #[error("resource limit exceeded: {0}")]
    Resource(String),

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("no clean stratum found: every point was labeled noise")]
    NoCleanStratum,

    #[error("training diverged at epoch {epoch}: {detail}")]
    Training { epoch: usize, detail: String },

    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },

    #[error("missing stage artifact: {}", .0.display())]
    MissingArtifact(PathBuf),

    #[error("model mismatch: {0}")]
    ModelMismatch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn param_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Parameter(msg.into()))
}
