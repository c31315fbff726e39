use std::path::PathBuf;

use thiserror::Error;

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const INPUT: i32 = 2;
    pub const NUMERIC: i32 = 3;
    pub const SELF_CHECK: i32 = 4;
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A library error, optionally with the file it concerns.
    #[error("{}{source}", context.as_ref().map(|c| format!("{c}: ")).unwrap_or_default())]
    Core {
        context: Option<String>,
        #[source]
        source: bregdiv::Error,
    },

    #[error("self-check failed: {0}")]
    SelfCheck(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use bregdiv::Error as E;
        match self {
            CliError::Config(_) | CliError::Io { .. } => exit::INPUT,
            CliError::SelfCheck(_) => exit::SELF_CHECK,
            CliError::Core { source, .. } => match source {
                E::Numeric(_) | E::NonFinite(_) | E::Consistency(_) => exit::NUMERIC,
                _ => exit::INPUT,
            },
        }
    }
}

impl From<bregdiv::Error> for CliError {
    fn from(source: bregdiv::Error) -> Self {
        CliError::Core { context: None, source }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Attaches a file path to library errors.
pub(crate) trait Context<T> {
    fn at(self, path: &std::path::Path) -> CliResult<T>;
}

impl<T> Context<T> for bregdiv::Result<T> {
    fn at(self, path: &std::path::Path) -> CliResult<T> {
        self.map_err(|source| match source {
            bregdiv::Error::Io(e) => CliError::Io {
                path: path.to_path_buf(),
                source: e,
            },
            source => CliError::Core {
                context: Some(path.display().to_string()),
                source,
            },
        })
    }
}

impl<T> Context<T> for std::io::Result<T> {
    fn at(self, path: &std::path::Path) -> CliResult<T> {
        self.map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}
