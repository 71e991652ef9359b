use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Broad failure class, used by the CLI to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numerical,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("input contains no reports")]
    EmptyInput,

    #[error("line {line}: report names no children")]
    EmptyReport { line: usize },

    #[error("line {line}: child {child:?} appears twice in the same report")]
    DuplicateMember { line: usize, child: String },

    #[error("child id {0:?} is listed more than once")]
    DuplicateChild(String),

    #[error("malformed matrix: {0}")]
    MalformedMatrix(String),

    #[error("no child is named in any report")]
    NoAnalyzableData,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("infeasible classroom profile: {0}")]
    InfeasibleProfile(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("model fit did not converge after {iterations} iterations (max margin residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("design matrix is rank deficient: {0}")]
    RankDeficient(String),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Io { .. } | Error::InvalidParameter(_) => ErrorKind::Config,
            Error::NonConvergence { .. } | Error::RankDeficient(_) => ErrorKind::Numerical,
            _ => ErrorKind::Data,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
