use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GmfeError {
    #[error(transparent)]
    Diff(#[from] diffcore::DiffError),

    #[error("io: {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("ingest: {path}: {detail}")]
    Ingest { path: PathBuf, detail: String },

    #[error("parse: {path}: row {row}, column {column}: {detail}")]
    Parse {
        path: PathBuf,
        row: usize,
        column: usize,
        detail: String,
    },

    #[error("schema: {path}: {detail}")]
    Schema { path: PathBuf, detail: String },

    #[error("invalid: {0}")]
    Invalid(String),

    #[error("config: {0}")]
    Config(String),

    #[error("prerequisite: run {0} first")]
    Prerequisite(&'static str),

    #[error("non-finite: {0}")]
    NonFinite(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("image: {0}")]
    Image(#[from] image::ImageError),
}

impl GmfeError {
    /// Short machine-readable category.
    pub fn kind(&self) -> &'static str {
        match self {
            GmfeError::Diff(_) => "compute",
            GmfeError::Io { .. } => "io",
            GmfeError::Ingest { .. } => "ingest",
            GmfeError::Parse { .. } => "parse",
            GmfeError::Schema { .. } => "schema",
            GmfeError::Invalid(_) => "invalid",
            GmfeError::Config(_) => "config",
            GmfeError::Prerequisite(_) => "prerequisite",
            GmfeError::NonFinite(_) => "non_finite",
            GmfeError::Json(_) => "json",
            GmfeError::Image(_) => "image",
        }
    }
}

pub type Result<T, E = GmfeError> = std::result::Result<T, E>;

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> GmfeError {
    let path = path.into();
    move |source| GmfeError::Io { path, source }
}

pub(crate) fn invalid(msg: impl Into<String>) -> GmfeError {
    GmfeError::Invalid(msg.into())
}
