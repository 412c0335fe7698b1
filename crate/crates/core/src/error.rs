use std::path::PathBuf;

use thiserror::Error;

use crate::panel::{Month, NodeId};

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("structural error: {0}")]
    Structure(String),

    #[error("node {0} is the root and has no parent")]
    RootHasNoParent(NodeId),

    #[error("unknown node {0}")]
    UnknownNode(NodeId),

    #[error("no rates at level {0}")]
    EmptyLevel(String),

    #[error("missing exogenous value for month {0}")]
    MissingExog(Month),

    #[error("data error: {0}")]
    Data(String),

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("nothing to train: {0}")]
    NothingTrainable(String),

    #[error("model file error: {0}")]
    ModelFile(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
