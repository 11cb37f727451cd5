//! Runner failures and their exit codes.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum RunError {
    #[error("config error: {0}")]
    Config(String),
    #[error("numerical guard tripped: {0}")]
    Numerical(fidelity_core::Error),
    #[error("{0}")]
    Core(fidelity_core::Error),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            RunError::Numerical(_) => 3,
            RunError::Core(_) | RunError::Io { .. } => 1,
        }
    }

    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        RunError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

impl From<fidelity_core::Error> for RunError {
    fn from(e: fidelity_core::Error) -> Self {
        if e.is_numerical() {
            RunError::Numerical(e)
        } else if matches!(
            e,
            fidelity_core::Error::InvalidParameter(_)
                | fidelity_core::Error::OddDimension(_)
                | fidelity_core::Error::PacketTooNarrow { .. }
        ) {
            RunError::Config(e.to_string())
        } else {
            RunError::Core(e)
        }
    }
}

pub type RunResult<T> = std::result::Result<T, RunError>;
