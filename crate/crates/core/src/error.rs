use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = FateError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum FateError {
    #[error("shape mismatch in {context}: expected {expected}, found {found}")]
    Shape {
        context: String,
        expected: String,
        found: String,
    },

    #[error("non-finite value in {stage}{}", doc.as_ref().map(|d| format!(" (document {d})")).unwrap_or_default())]
    Numeric { stage: String, doc: Option<String> },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("invalid configuration field `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("degenerate reference prior: sample standard deviation is zero over {draws} draws")]
    DegeneratePrior { draws: usize },

    #[error("metric undefined: {0}")]
    MetricUndefined(String),

    #[error("malformed file {}: {reason}", path.display())]
    Format { path: PathBuf, reason: String },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("data error: {0}")]
    Data(String),
}

impl FateError {
    pub(crate) fn shape(
        context: impl Into<String>,
        expected: impl Into<String>,
        found: impl Into<String>,
    ) -> Self {
        FateError::Shape {
            context: context.into(),
            expected: expected.into(),
            found: found.into(),
        }
    }

    pub(crate) fn numeric(stage: impl Into<String>, doc: Option<&str>) -> Self {
        FateError::Numeric {
            stage: stage.into(),
            doc: doc.map(str::to_owned),
        }
    }

    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        FateError::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        FateError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        FateError::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            FateError::Precondition(_) | FateError::Config { .. } => 1,
            FateError::Shape { .. }
            | FateError::MetricUndefined(_)
            | FateError::Format { .. }
            | FateError::Io { .. }
            | FateError::Data(_) => 2,
            FateError::Numeric { .. } | FateError::DegeneratePrior { .. } => 3,
        }
    }
}
