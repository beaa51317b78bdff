use std::io;
use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] lart::Error),

    #[error("config: {0}")]
    Config(String),

    #[error("unknown config key `{0}`")]
    UnknownKey(String),

    #[error("missing input files: {}", .0.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(", "))]
    MissingInputs(Vec<PathBuf>),

    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },

    #[error("plot {0}: {1}")]
    Plot(String, String),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit status: 2 config, 3 data, 4 numeric, 1 I/O and anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::UnknownKey(_) => 2,
            CliError::MissingInputs(_) => 3,
            CliError::Core(e) => match e.kind() {
                lart::ErrorKind::Config => 2,
                lart::ErrorKind::Data => 3,
                lart::ErrorKind::Numeric => 4,
                lart::ErrorKind::Io => 1,
            },
            CliError::Io { .. } | CliError::Plot(..) => 1,
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
