use std::path::PathBuf;

/// Errors raised anywhere in the charting pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("singular geometry: {0}")]
    SingularGeometry(String),

    #[error("degenerate feature at location {index}: second moment has zero norm")]
    DegenerateFeature { index: usize },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("solver diverged at iteration {iteration}: non-finite objective")]
    SolverDivergence { iteration: usize },

    #[error("training diverged at epoch {epoch}: loss is not finite")]
    TrainingDivergence { epoch: usize },

    #[error("config error in {key}: {message}")]
    Config { key: String, message: String },

    #[error("malformed {what} file {path}: {message}")]
    Format {
        what: &'static str,
        path: PathBuf,
        message: String,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(what: &'static str, path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            what,
            path: path.into(),
            message: message.into(),
        }
    }

    /// Coarse class of the error, used by the CLI for exit codes.
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config { .. } | Error::Parameter(_) | Error::InvalidScenario(_) => ErrorClass::Config,
            Error::SingularGeometry(_) | Error::DegenerateFeature { .. } | Error::Contract(_) => ErrorClass::Model,
            Error::SolverDivergence { .. } | Error::TrainingDivergence { .. } => ErrorClass::Solver,
            Error::Io { .. } | Error::Format { .. } => ErrorClass::Io,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Model,
    Solver,
    Io,
}

pub type Result<T> = std::result::Result<T, Error>;
