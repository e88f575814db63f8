use std::path::PathBuf;

/// Errors of the lab layer, grouped by the exit status they map to.
#[derive(Debug, thiserror::Error)]
pub enum LabError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("config error: {0}")]
    Config(String),
    #[error("{0}")]
    Validation(String),
    #[error(transparent)]
    Core(#[from] aope_core::Error),
}

pub type Result<T> = std::result::Result<T, LabError>;

impl LabError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        LabError::Io { path: path.into(), source }
    }

    pub fn format(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        LabError::Format { path: path.into(), message: message.to_string() }
    }

    /// 1 for validation failures, 2 for IO and malformed files, 3 for bad
    /// configuration.
    pub fn exit_code(&self) -> u8 {
        match self {
            LabError::Validation(_) | LabError::Core(_) => 1,
            LabError::Io { .. } | LabError::Format { .. } => 2,
            LabError::Config(_) => 3,
        }
    }
}
