use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config field `{field}`: {message}")]
    Config { field: String, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("writing metrics: {0}")]
    Csv(#[from] csv::Error),
    #[error("writing metrics: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Sim(#[from] rotsecagg::Error),
}
