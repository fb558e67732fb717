use std::path::PathBuf;

/// Failure classes, each with its own process exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("{path}: {source}")]
    File { path: PathBuf, source: morphreg::Error },

    #[error(transparent)]
    Core(#[from] morphreg::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use morphreg::Error as E;
        match self {
            CliError::Usage(_) | CliError::Core(E::Config(_)) => 2,
            CliError::File { source: E::Numerical(_), .. } | CliError::Core(E::Numerical(_)) => 4,
            // anything wrong with a named input file is a data problem
            CliError::File { .. } | CliError::Core(_) => 3,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Attaches the offending path to an error from the library.
pub trait WithPath<T> {
    fn at(self, path: &std::path::Path) -> CliResult<T>;
}

impl<T> WithPath<T> for morphreg::Result<T> {
    fn at(self, path: &std::path::Path) -> CliResult<T> {
        self.map_err(|source| CliError::File { path: path.to_path_buf(), source })
    }
}
