use std::path::PathBuf;

/// Lab-level errors; `Core` wraps the algorithmic crate's error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] contrario_core::Error),

    #[error("shape mismatch in {what}: {left:?} vs {right:?}")]
    ShapeMismatch { what: &'static str, left: Vec<usize>, right: Vec<usize> },

    #[error("invalid network spec: {0}")]
    InvalidSpec(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("non-finite loss at step {step} (epoch {epoch}); diagnostics: {diagnostics}")]
    NonFinite { step: u64, epoch: usize, diagnostics: String },

    #[error("missing checkpoint for epoch {epoch}")]
    MissingCheckpoint { epoch: usize },

    #[error("checkpoint format error: {0}")]
    CheckpointFormat(String),

    #[error("experiment {0} is locked by another process (stale lock file: {1})")]
    Locked(String, PathBuf),

    #[error("stage {0} already complete; re-run with --force to redo")]
    StageComplete(String),

    #[error("classifier accuracy {accuracy:.4} below the {floor:.2} floor; probe would be meaningless")]
    ClassifierBelowFloor { accuracy: f64, floor: f64 },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serde(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
