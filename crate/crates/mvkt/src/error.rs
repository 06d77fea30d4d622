//! Crate-wide error type.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("ln of non-positive input {value}")]
    NonPositiveLog { value: f64 },

    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },

    #[error("backward called twice on the same tape without reset")]
    BackwardTwice,

    #[error("backward on a detached graph: loss does not depend on any trainable leaf")]
    DetachedGraph,

    #[error("{what} index {index} out of range (limit {limit})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        limit: usize,
    },

    #[error("duplicate index {index} in bank update")]
    DuplicateIndex { index: usize },

    #[error("requested {requested} rows but only {available} are available")]
    InsufficientRows { requested: usize, available: usize },

    #[error("embedding row {row} is not unit-norm (norm {norm})")]
    NonUnitRow { row: usize, norm: f64 },

    #[error("non-finite value in loss term `{term}`")]
    NonFinite { term: &'static str },

    #[error("record {id}: expected {expected} bytes, file {path} has {got}")]
    PackByteLength {
        id: String,
        path: PathBuf,
        expected: u64,
        got: u64,
    },

    #[error("record {id}: referenced file {path} does not exist")]
    PackMissingFile { id: String, path: PathBuf },

    #[error("pack manifest not found at {path}")]
    PackMissingManifest { path: PathBuf },

    #[error("record {id}: fold index {fold} outside 1..=10")]
    PackFoldRange { id: String, fold: u32 },

    #[error("dataset has {records} records, need at least {folds} for {folds} folds")]
    TooFewRecords { records: usize, folds: usize },

    #[error("class {class} has a single outcome value; AUC undefined")]
    SingleClass { class: usize },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("checkpoint {path}: {reason}")]
    Checkpoint { path: PathBuf, reason: String },

    #[error("adam step index must be >= 1, got {t}")]
    AdamStep { t: u64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}
