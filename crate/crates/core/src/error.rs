use std::path::PathBuf;

use thiserror::Error;

use crate::numerics::NumericsError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("{path}: {detail}")]
    Schema { path: PathBuf, detail: String },
    #[error("category {category:?} has {count} records, needs at least {needed}")]
    SmallCategory { category: String, count: usize, needed: usize },
    #[error("category id {category} out of range for {num_categories} categories")]
    UnknownCategory { category: usize, num_categories: usize },
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("evaluation hygiene violated: {0}")]
    Hygiene(String),
    #[error("training set contains a single category")]
    SingleCategory,
    #[error("report inconsistent: {0}")]
    Report(String),
    #[error("stage {stage} failed: {source}")]
    Stage { stage: &'static str, source: Box<Error> },
}

impl Error {
    /// Short machine-readable kind of the error.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Numerics(_) => "numerics",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
            Error::Csv(e) if matches!(e.kind(), csv::ErrorKind::Io(_)) => "io",
            Error::Csv(_) => "csv",
            Error::Schema { .. } => "schema",
            Error::SmallCategory { .. } => "small_category",
            Error::UnknownCategory { .. } => "unknown_category",
            Error::Empty(_) => "empty",
            Error::Config(_) => "config",
            Error::Hygiene(_) => "hygiene",
            Error::SingleCategory => "single_category",
            Error::Report(_) => "report",
            Error::Stage { source, .. } => source.kind(),
        }
    }
}

/// Tags a failure with the pipeline stage it came from.
pub fn in_stage<T>(stage: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Stage { .. } => e,
        other => Error::Stage { stage, source: Box::new(other) },
    })
}
