use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("empty batch")]
    EmptyBatch,

    #[error("negative sample weight {0}")]
    NegativeWeight(f64),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("csv error at row {row}: {msg}")]
    CsvRow { row: usize, msg: String },

    #[error("csv error: {0}")]
    Csv(String),

    #[error("unknown task '{0}'")]
    UnknownTask(String),

    #[error("unknown method '{0}'")]
    UnknownMethod(String),

    #[error("oracle queried {0} time(s) during optimization; it may only be used for evaluation")]
    OracleHygiene(u64),

    #[error("rank table is missing {method} on task {task}")]
    RankMissingCell { task: String, method: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.display().to_string(),
            source,
        }
    }
}
