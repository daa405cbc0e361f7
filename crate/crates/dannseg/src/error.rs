use std::io;
use std::path::{Path, PathBuf};

/// Errors of the file formats and commands, grouped by exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("{0}")]
    Config(String),

    #[error("{0}")]
    Data(String),

    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },

    #[error(transparent)]
    Core(#[from] dannseg_core::Error),
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const USAGE: i32 = 1;
    pub const DATA: i32 = 2;
    pub const NUMERICAL: i32 = 3;
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use dannseg_core::Error as E;
        match self {
            CliError::Usage(_) | CliError::Config(_) => exit::USAGE,
            CliError::Data(_) | CliError::Io { .. } => exit::DATA,
            CliError::Core(e) => match e {
                E::NonFinite(_) => exit::NUMERICAL,
                E::Config(_) | E::InvalidArgument(_) | E::AlphaOutOfRange(_) => exit::USAGE,
                _ => exit::DATA,
            },
        }
    }

    pub fn io(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
        move |source| CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn is_numerical(&self) -> bool {
        self.exit_code() == exit::NUMERICAL
    }
}
