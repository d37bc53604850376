use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("{context}: {source}")]
    Run {
        context: String,
        #[source]
        source: rmtssl::Error,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("writing {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

impl CliError {
    /// 2 for configuration problems, 3 for numerical or solver failures,
    /// 1 for anything else.
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Config(_) => 2,
            Self::Run { .. } => 3,
            Self::Io { .. } | Self::Csv { .. } => 1,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub(crate) fn config<T>(msg: impl Into<String>) -> CliResult<T> {
    Err(CliError::Config(msg.into()))
}

/// Attaches context to library errors.
pub(crate) trait Context<T> {
    fn context(self, what: impl FnOnce() -> String) -> CliResult<T>;
    /// Library errors raised while checking the configuration.
    fn invalid(self, what: &str) -> CliResult<T>;
}

impl<T> Context<T> for rmtssl::Result<T> {
    fn context(self, what: impl FnOnce() -> String) -> CliResult<T> {
        self.map_err(|source| CliError::Run { context: what(), source })
    }

    fn invalid(self, what: &str) -> CliResult<T> {
        self.map_err(|e| CliError::Config(format!("{what}: {e}")))
    }
}
