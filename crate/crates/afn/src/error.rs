use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum AppError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Numeric(String),
    #[error(transparent)]
    Core(#[from] afn_core::Error),
}

pub type AppResult<T> = std::result::Result<T, AppError>;

impl AppError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    /// 2 usage, 3 data, 4 numeric failure.
    pub fn exit_code(&self) -> i32 {
        use afn_core::Error as E;
        match self {
            Self::Usage(_) => 2,
            Self::Io { .. } | Self::Parse { .. } | Self::Data(_) => 3,
            Self::Numeric(_) => 4,
            Self::Core(e) => match e {
                E::NonFiniteLoss { .. } => 4,
                E::MaxOrder { .. } | E::Config(_) | E::InvalidRatios(_) | E::BatchTooSmall(_) => 2,
                _ => 3,
            },
        }
    }
}
