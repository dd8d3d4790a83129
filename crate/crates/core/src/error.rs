use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("row {0} has zero norm and cannot be normalized")]
    ZeroVectorRow(usize),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("invalid parameter: {0}")]
    Param(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("cluster {0} has no members")]
    EmptyCluster(usize),

    #[error("{clusters} clusters available but {per_batch} are needed per batch")]
    TooFewClusters { clusters: usize, per_batch: usize },

    #[error("label {label} out of range for {num_proxies} proxies")]
    LabelOutOfRange { label: usize, num_proxies: usize },

    #[error("degenerate batch: {0}")]
    DegenerateBatch(String),

    #[error("iteration {t} outside 1..={horizon}")]
    Range { t: usize, horizon: usize },

    #[error("ground-truth identity missing for sample {0}")]
    MissingTruth(usize),

    #[error("no relevant item in ranking")]
    NoRelevant,

    #[error("corrupt checkpoint {path}: {reason}")]
    CorruptCheckpoint { path: PathBuf, reason: String },

    #[error("missing artifact: {0}")]
    MissingArtifact(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("iteration {iteration}{}: {source}", epoch.map(|e| format!(", epoch {e}")).unwrap_or_default())]
    Pipeline {
        iteration: usize,
        epoch: Option<usize>,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn at(self, iteration: usize, epoch: Option<usize>) -> Self {
        Error::Pipeline {
            iteration,
            epoch,
            source: Box::new(self),
        }
    }

    /// Innermost error, looking through pipeline coordinates.
    pub fn root(&self) -> &Error {
        match self {
            Error::Pipeline { source, .. } => source.root(),
            other => other,
        }
    }
}
