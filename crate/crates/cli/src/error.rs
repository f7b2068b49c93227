use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = CliError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("{path}: byte {offset}: {message}")]
    Parse { path: PathBuf, offset: usize, message: String },
    #[error("missing input: {0}")]
    MissingInput(String),
    #[error("numerical degeneracy: {0}")]
    Degenerate(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Core(#[from] bsa_core::Error),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }

    /// 2 invalid config or input, 3 missing input files, 4 numerical degeneracy, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        use bsa_core::Error as E;
        match self {
            CliError::InvalidConfig(_) | CliError::Parse { .. } => 2,
            CliError::MissingInput(_) => 3,
            CliError::Degenerate(_) => 4,
            CliError::Io { .. } => 1,
            CliError::Core(e) => match e {
                E::MissingRecord { .. } => 3,
                E::DegenerateSingles(_) | E::UndefinedQber | E::MissingQber(_) | E::InsufficientData(_) => 4,
                _ => 2,
            },
        }
    }
}
