use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("missing dataset file {0}")]
    MissingFile(PathBuf),
    #[error("parse error in {file} line {line}: {msg}")]
    Parse {
        file: String,
        line: usize,
        msg: String,
    },
    #[error("edge ({src}, {dst}) references a node outside 0..{n_nodes}")]
    DanglingEdge {
        src: usize,
        dst: usize,
        n_nodes: usize,
    },
    #[error("node {node} has label {label} but only {n_classes} classes are declared")]
    LabelOutOfRange {
        node: usize,
        label: usize,
        n_classes: usize,
    },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("class {class} has {count} labeled nodes; at least 3 are needed to stratify")]
    ClassTooSmall { class: usize, count: usize },
    #[error("stale forward cache: produced at parameter version {cached}, parameters are at {current}")]
    StaleCache { cached: u64, current: u64 },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("zero-norm vector in {0}")]
    ZeroNorm(String),
    #[error("affinity matrix is not symmetric at ({row}, {col})")]
    NotSymmetric { row: usize, col: usize },
    #[error("missing soft prediction for non-clean node {0}")]
    MissingScores(usize),
    #[error("need at least {needed} points for clustering, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("clean set collapsed to {n_clean} nodes (fewer than {n_classes} classes); eta is likely too high")]
    CleanSetCollapsed { n_clean: usize, n_classes: usize },
    #[error("training diverged at epoch {0} (non-finite loss)")]
    Diverged(usize),
    #[error("model file: {0}")]
    ModelFormat(String),
    #[error("source dataset exhausted: requested {requested} nodes, {available} available")]
    SourceExhausted { requested: usize, available: usize },
    #[error("config: {0}")]
    Config(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
