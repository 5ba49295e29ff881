use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("file not found: {0}")]
    MissingFile(PathBuf),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("column `{0}` not found")]
    MissingColumn(String),
    #[error("no usable rows ({dropped} dropped)")]
    NoUsableRows { dropped: usize },
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
    #[error("invalid split: {0}")]
    InvalidSplit(String),
    #[error("invalid grouping: {0}")]
    InvalidGrouping(String),
    #[error("unknown synthetic example `{0}`")]
    UnknownExample(String),
    #[error("quantity `{quantity}` has no closed form for `{example}`")]
    NoClosedForm { example: String, quantity: String },
    #[error("invalid boosting parameters: {0}")]
    InvalidParams(String),
    #[error("empty training set")]
    EmptyTrainingSet,
    #[error("gam mode requires a feature grouping")]
    MissingGrouping,
    #[error("feature index {0} is not present in the rows")]
    MissingFeature(usize),
    #[error("ensemble is not in gam mode")]
    NotGam,
    #[error("unknown group {0}")]
    UnknownGroup(String),
    #[error("cycle in causal graph: {}", .0.join(" -> "))]
    Cycle(Vec<String>),
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("invalid causal graph: {0}")]
    InvalidDag(String),
    #[error("{nodes} nodes exceed the exact counting limit of {limit}")]
    NodeLimit { nodes: usize, limit: usize },
    #[error("position {position} out of range for ordering of length {len}")]
    OutOfRange { position: usize, len: usize },
    #[error("{groups} groups exceed the exact enumeration limit of {limit}")]
    TooManyGroups { groups: usize, limit: usize },
    #[error("missing estimator for coalition {0}")]
    MissingEstimator(String),
    #[error("missing ledger entry for {0}")]
    MissingLedgerEntry(String),
    #[error("coalitions overlap: {0}")]
    OverlappingCoalitions(String),
    #[error("empty test set")]
    EmptyTestSet,
    #[error("mismatched runs: {0}")]
    MismatchedRuns(String),
    #[error("store error: {0}")]
    Store(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
