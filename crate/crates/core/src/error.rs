use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    #[error("json error in {context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },

    #[error("validation failed at {field}: {message}")]
    Validation { field: String, message: String },

    #[error("segment {segment} is already labeled by instance {existing}, cannot assign instance {requested}")]
    LabelConflict {
        segment: usize,
        existing: u32,
        requested: u32,
    },

    #[error("scene has no normals; run estimate_normals first")]
    MissingNormals,

    #[error("could not place instance {instance} ({class}) after {attempts} attempts")]
    Placement {
        instance: usize,
        class: String,
        attempts: usize,
    },

    #[error("node {node} is unlabeled and its component contains no labeled node")]
    UnreachableLabel { node: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite loss in scene {scene}")]
    NonFiniteLoss { scene: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn validation(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json {
            context: context.into(),
            source,
        }
    }

    /// True for errors caused by bad input data rather than a runtime failure.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. }
                | Error::Json { .. }
                | Error::Validation { .. }
                | Error::LabelConflict { .. }
                | Error::MissingNormals
                | Error::Shape(_)
                | Error::InvalidArgument(_)
        )
    }
}
