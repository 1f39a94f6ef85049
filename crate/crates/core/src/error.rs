use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the training engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected}, found {found}")]
    Shape {
        context: String,
        expected: String,
        found: String,
    },

    #[error("label {label} at sample {index} is outside [0, {classes})")]
    LabelOutOfRange {
        index: usize,
        label: usize,
        classes: usize,
    },

    #[error("empty batch")]
    EmptyBatch,

    #[error("non-finite value in {block}")]
    NonFinite { block: String },

    #[error("support overlap in layer {layer} at ({row}, {col})")]
    SupportOverlap {
        layer: usize,
        row: usize,
        col: usize,
    },

    #[error("mask entry outside past support in layer {layer} at ({row}, {col})")]
    MaskOutsidePast {
        layer: usize,
        row: usize,
        col: usize,
    },

    #[error("invalid budget: {0}")]
    Budget(String),

    #[error("no free capacity left in layer {layer}")]
    NoFreeCapacity { layer: usize },

    #[error("oracle instance too large: {eligible} eligible coordinates (limit {limit})")]
    OracleTooLarge { eligible: usize, limit: usize },

    #[error("augmented loss diverged at task {task}, iteration {iteration}: {loss}")]
    Divergence {
        task: usize,
        iteration: usize,
        loss: f64,
    },

    #[error("unknown task {0}")]
    UnknownTask(usize),

    #[error("invalid dataset: {0}")]
    Dataset(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("checkpoint {path}: {reason}")]
    Checkpoint { path: PathBuf, reason: String },

    #[error("missing artifacts in {dir}: {missing:?}")]
    MissingArtifacts { dir: PathBuf, missing: Vec<String> },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn shape(
        context: impl Into<String>,
        expected: impl std::fmt::Debug,
        found: impl std::fmt::Debug,
    ) -> Self {
        Error::Shape {
            context: context.into(),
            expected: format!("{expected:?}"),
            found: format!("{found:?}"),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
