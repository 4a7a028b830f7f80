use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the reconstruction toolkit.
///
/// Every variant maps onto a stable machine-readable category via
/// [`Error::category`], which the command-line front end prints on failure.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("structural mismatch: {0}")]
    Structure(String),

    #[error("format error in {source_name}{}: {message}", location.as_ref().map(|l| format!(" ({l})")).unwrap_or_default())]
    Format {
        source_name: String,
        location: Option<String>,
        message: String,
    },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("label parse error at line {line}: {message}")]
    LabelParse { line: usize, message: String },

    #[error("mask is empty")]
    EmptyMask,

    #[error("evaluation region is empty")]
    EmptyRegion,

    #[error("solver did not converge after {iterations} iterations (residual bound {residual:e})")]
    Convergence { iterations: usize, residual: f64 },

    #[error("completion backend unavailable: {0}")]
    Backend(String),

    #[error("completion protocol violation: {0}")]
    Protocol(String),

    #[error("refusing to write into non-empty directory {0} (use force to overwrite)")]
    OutputExists(PathBuf),

    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image codec error at {path}: {message}")]
    Image { path: PathBuf, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(source_name: impl Into<String>, location: Option<String>, message: impl Into<String>) -> Self {
        Error::Format {
            source_name: source_name.into(),
            location,
            message: message.into(),
        }
    }

    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// Short category string, stable across releases.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Parameter(_) => "parameter",
            Error::Structure(_) => "structure",
            Error::Format { .. } => "format",
            Error::Validation(_) => "validation",
            Error::LabelParse { .. } => "label-parse",
            Error::EmptyMask => "empty-mask",
            Error::EmptyRegion => "empty-region",
            Error::Convergence { .. } => "convergence",
            Error::Backend(_) => "backend",
            Error::Protocol(_) => "protocol",
            Error::OutputExists(_) => "output-exists",
            Error::Stage { source, .. } => source.category(),
            Error::Io { .. } => "io",
            Error::Image { .. } => "image",
        }
    }
}
