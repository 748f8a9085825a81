use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid shape: {0}")]
    InvalidShape(String),

    #[error("label {label} out of range for {classes} classes")]
    InvalidLabel { label: usize, classes: usize },

    #[error("degenerate batch: batch normalization needs at least 2 rows in training mode, got {0}")]
    DegenerateBatch(usize),

    #[error("numeric fault: {0}")]
    NumericFault(String),

    #[error("invalid pruning rate {0}: expected 0 <= p < 1")]
    InvalidRate(f64),

    #[error("missing input: {0}")]
    MissingInput(String),

    #[error("layer {layer} has no neurons left to prune")]
    ExhaustedLayer { layer: usize },

    #[error("empty sample")]
    EmptySample,

    #[error("invalid arguments: {0}")]
    InvalidArgs(String),

    #[error("config error at {location}: {message}")]
    Config { location: String, message: String },

    #[error("format error in {field}: {message}")]
    Format { field: String, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn config(location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            location: location.into(),
            message: message.into(),
        }
    }

    pub(crate) fn format(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Format {
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
