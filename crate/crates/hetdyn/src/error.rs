use std::io;
use std::path::{Path, PathBuf};

/// Errors of the file formats and command-line layer.
#[derive(Debug, thiserror::Error)]
pub enum HdynError {
    #[error(transparent)]
    Core(#[from] hetdyn_core::Error),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("{}: {message}", path.display())]
    Parse { path: PathBuf, message: String },
    #[error("{}: truncated, needed {expected} bytes of `{block}` but found {found}", path.display())]
    Truncated {
        path: PathBuf,
        block: String,
        expected: usize,
        found: usize,
    },
    #[error("{}: format version {found} is not supported (expected {expected})", path.display())]
    Version { path: PathBuf, found: u32, expected: u32 },
    #[error("{0}")]
    Usage(String),
}

pub type Result<T> = std::result::Result<T, HdynError>;

impl HdynError {
    pub(crate) fn io(path: &Path, source: io::Error) -> Self {
        HdynError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub(crate) fn parse(path: &Path, message: impl Into<String>) -> Self {
        HdynError::Parse {
            path: path.to_path_buf(),
            message: message.into(),
        }
    }

    /// Process exit code: 2 usage or configuration, 3 numeric divergence, 4 I/O.
    pub fn exit_code(&self) -> i32 {
        use hetdyn_core::Error as E;
        match self {
            HdynError::Core(E::Diverged { .. } | E::NonFiniteLoss { .. }) => 3,
            HdynError::Core(_) | HdynError::Usage(_) => 2,
            HdynError::Io { .. } | HdynError::Parse { .. } | HdynError::Truncated { .. } | HdynError::Version { .. } => 4,
        }
    }
}
