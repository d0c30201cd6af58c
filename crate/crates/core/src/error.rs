use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value produced by node {node} ({op})")]
    NonFinite { node: usize, op: &'static str },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid config at `{path}`: {reason}")]
    Config { path: String, reason: String },

    #[error("invalid config: {}", .0.iter().map(|(p, r)| format!("`{p}`: {r}")).collect::<Vec<_>>().join("; "))]
    ConfigIssues(Vec<(String, String)>),

    #[error("dataset: {0}")]
    Dataset(String),

    #[error("partition: {0}")]
    Partition(String),

    #[error("aggregation: {0}")]
    Aggregation(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("calibration: {0}")]
    Calibration(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(path: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
