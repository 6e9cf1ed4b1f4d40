use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = MppError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum MppError {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite values in {0}")]
    NonFinite(&'static str),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("CFL violation: dt={dt:.3e} exceeds limit {limit:.3e}")]
    Cfl { dt: f64, limit: f64 },

    #[error("unknown {kind} `{name}`")]
    Unknown { kind: &'static str, name: String },

    #[error("duplicate field `{0}` in registry")]
    DuplicateField(String),

    #[error("window offset t0={t0} out of range for trajectory with {n_steps} steps (T={t})")]
    WindowRange { t0: usize, t: usize, n_steps: usize },

    #[error("bad file format in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("checkpoint checksum mismatch (stored {stored:#010x}, computed {computed:#010x})")]
    Checksum { stored: u32, computed: u32 },

    #[error("training diverged at update {update}: {detail}")]
    Diverged { update: usize, detail: String },

    #[error("empty {0}")]
    Empty(&'static str),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl MppError {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Self::Config(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Self::Shape(msg.into())
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Self::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
