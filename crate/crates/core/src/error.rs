use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = StitchError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum StitchError {
    #[error("cannot decode image {path}: {reason}")]
    Decode { path: PathBuf, reason: String },

    #[error("cannot encode image {path}: {reason}")]
    Encode { path: PathBuf, reason: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error("correspondence {index} is invalid: {reason}")]
    Validation { index: usize, reason: String },

    #[error("insufficient matches: found {found}, need at least {needed}")]
    InsufficientMatches { found: usize, needed: usize },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("no registration survived filtering ({0})")]
    NoRegistration(String),

    #[error("instance too large: {0}")]
    TooLarge(String),

    #[error("evaluation error: {0}")]
    Eval(String),

    #[error("empty problem: {0}")]
    EmptyProblem(String),

    #[error("config error{}: key `{key}`: {reason}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    Config {
        key: String,
        line: Option<usize>,
        reason: String,
    },

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<StitchError>,
    },
}

impl StitchError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        StitchError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn config(
        key: impl Into<String>,
        line: Option<usize>,
        reason: impl Into<String>,
    ) -> Self {
        StitchError::Config {
            key: key.into(),
            line,
            reason: reason.into(),
        }
    }

    /// Wraps `self` with the name of the pipeline stage that produced it.
    pub fn in_stage(self, stage: &'static str) -> Self {
        match self {
            s @ StitchError::Stage { .. } => s,
            other => StitchError::Stage {
                stage,
                source: Box::new(other),
            },
        }
    }

    /// The innermost error, looking through stage wrappers.
    pub fn root(&self) -> &StitchError {
        match self {
            StitchError::Stage { source, .. } => source.root(),
            other => other,
        }
    }

    /// Stage name if this error was raised inside the pipeline.
    pub fn stage(&self) -> Option<&'static str> {
        match self {
            StitchError::Stage { stage, .. } => Some(stage),
            _ => None,
        }
    }
}
