use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument fell outside the domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A point landed on or behind the camera plane.
    #[error("point is behind the camera (z = {0})")]
    BehindCamera(f64),

    /// A NaN or infinity appeared where finite numbers are required.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Mismatched shapes or otherwise broken caller contract.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid config: {0}")]
    Config(String),

    /// Training produced a non-finite loss.
    #[error("training diverged at iteration {iteration}: {detail}")]
    Diverged { iteration: usize, detail: String },

    #[error("bad file format in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    /// Another process holds the experiment directory.
    #[error("experiment directory is locked: {0}")]
    Locked(PathBuf),

    #[error("missing artifact: {0}")]
    MissingArtifact(PathBuf),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}

pub(crate) fn contract(msg: impl Into<String>) -> Error {
    Error::Contract(msg.into())
}
