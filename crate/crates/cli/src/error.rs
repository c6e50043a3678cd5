use std::fmt;
use std::path::{Path, PathBuf};

use naop_core::Error as CoreError;

pub const EXIT_OTHER: u8 = 1;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_IO: u8 = 3;
pub const EXIT_INVALID_DATA: u8 = 4;
pub const EXIT_MISMATCH: u8 = 5;
pub const EXIT_INSUFFICIENT: u8 = 6;

#[derive(Debug)]
pub enum CliError {
    /// Invalid flag combination.
    Usage(String),
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    /// Error while reading or processing `path`.
    Input {
        path: PathBuf,
        source: CoreError,
    },
    Core(CoreError),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.to_owned(), source }
    }

    pub fn input(path: &Path) -> impl FnOnce(CoreError) -> Self + '_ {
        move |source| CliError::Input { path: path.to_owned(), source }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Io { .. } => EXIT_IO,
            CliError::Input { source, .. } | CliError::Core(source) => match source {
                CoreError::Io(_) => EXIT_IO,
                CoreError::ModelMismatch(_) | CoreError::FormatVersion { .. } | CoreError::CorruptModel(_) => {
                    EXIT_MISMATCH
                }
                CoreError::InsufficientData(_) => EXIT_INSUFFICIENT,
                CoreError::Numerical(_) => EXIT_OTHER,
                _ => EXIT_INVALID_DATA,
            },
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Io { path, source } => write!(f, "{}: {source}", path.display()),
            CliError::Input { path, source } => write!(f, "{}: {source}", path.display()),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        CliError::Core(e)
    }
}

pub type CliResult<T> = Result<T, CliError>;
