use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] sifd_core::Error),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("{}:{line}: {msg}", path.display())]
    Parse { path: PathBuf, line: usize, msg: String },

    #[error("{0}")]
    Usage(String),

    #[error("{0}")]
    Data(String),

    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(io::Error) -> Error {
        let path = path.into();
        move |source| Error::Io { path, source }
    }

    pub fn parse(path: impl Into<PathBuf>, line: usize, msg: impl ToString) -> Error {
        Error::Parse { path: path.into(), line, msg: msg.to_string() }
    }

    pub(crate) fn at_stage(stage: &'static str) -> impl FnOnce(Error) -> Error {
        move |e| match e {
            e @ Error::Stage { .. } => e,
            e => Error::Stage { stage, source: Box::new(e) },
        }
    }

    /// 1 for usage errors, 3 for scoring-backend failures, 2 for everything
    /// else (bad or inconsistent data).
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) => 1,
            Error::Core(e) if e.is_backend() => 3,
            Error::Core(sifd_core::Error::InvalidConfig { .. } | sifd_core::Error::InvalidRatio { .. }) => 1,
            Error::Stage { source, .. } => source.exit_code(),
            _ => 2,
        }
    }
}
