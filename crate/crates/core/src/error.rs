use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Autodiff(#[from] autodiff::AutodiffError),
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("{0}: no events")]
    EmptyInput(String),
    #[error("cutting timestamp {0} is after every event; nothing left to evaluate")]
    NoEvaluationData(u64),
    #[error("meta set is empty: ratio {ratio} of {casual} casual users rounds to 0, use a larger ratio")]
    EmptyMetaSet { ratio: f64, casual: usize },
    #[error("prefix is empty")]
    EmptyPrefix,
    #[error("item index {item} out of range for a catalog of {catalog} items")]
    UnknownItem { item: usize, catalog: usize },
    #[error("target item {0} is in the exclusion set")]
    TargetExcluded(usize),
    #[error("sequence of length {len} exceeds the positional table of {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("substitute action used without a substitution table")]
    MissingSubstitutionTable,
    #[error("{actions} actions for a sequence of length {len}")]
    MisalignedActions { actions: usize, len: usize },
    #[error("simulated user {0} has an empty memory")]
    EmptyMemory(usize),
    #[error("user {0} is not part of the simulation environment")]
    UnknownSimUser(usize),
    #[error("config key `{key}`: {message}")]
    Config { key: String, message: String },
    #[error("missing prerequisite artifact {}", .0.display())]
    MissingArtifact(PathBuf),
    #[error("{0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
