use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Failure classes. Each maps onto one CLI exit code through [`Error::exit_code`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("rejected input: {0}")]
    InvalidInput(String),

    #[error("row {row}: {message}")]
    Row { row: usize, message: String },

    #[error("duplicate id `{0}`")]
    DuplicateId(String),

    #[error("missing required column `{0}`")]
    MissingColumn(String),

    #[error("invalid schema: {0}")]
    Schema(String),

    #[error("invalid benchmark table: {0}")]
    Benchmark(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("degenerate propensity fit: {0}")]
    DegenerateFit(String),

    #[error("propensity underflow for respondent `{id}`: {propensity:e}")]
    PropensityUnderflow { id: String, propensity: f64 },

    #[error("undefined ratio: weighted denominator is zero")]
    UndefinedRatio,

    #[error("empty sample")]
    EmptySample,

    #[error("non-finite outcome for respondent `{0}`")]
    NonFiniteOutcome(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn csv(path: impl Into<PathBuf>, source: csv::Error) -> Self {
        // csv wraps io failures; surface them as io so the exit code is right
        let path = path.into();
        if source.is_io_error() {
            match source.into_kind() {
                csv::ErrorKind::Io(e) => return Error::Io { path, source: e },
                _ => unreachable!(),
            }
        }
        Error::Csv { path, source }
    }

    /// Short machine-readable class name.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::DegenerateFit(_)
            | Error::PropensityUnderflow { .. }
            | Error::UndefinedRatio
            | Error::Numerical(_) => "numerical",
            Error::Io { .. } => "io",
            _ => "validation",
        }
    }

    /// 1 validation, 2 numerical, 3 io.
    pub fn exit_code(&self) -> i32 {
        match self.kind() {
            "numerical" => 2,
            "io" => 3,
            _ => 1,
        }
    }
}
