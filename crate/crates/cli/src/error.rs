use sparkle_core::SparkleError;
use thiserror::Error;

/// Failure classes, each with its own process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("i/o failure: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Numerical(_) => 2,
            CliError::Io(_) => 3,
        }
    }

    /// Prefixes the message with the pipeline stage that failed.
    pub fn in_stage(self, stage: &str) -> Self {
        match self {
            CliError::Config(m) => CliError::Config(format!("{stage}: {m}")),
            CliError::Numerical(m) => CliError::Numerical(format!("{stage}: {m}")),
            CliError::Io(m) => CliError::Io(format!("{stage}: {m}")),
        }
    }
}

impl From<SparkleError> for CliError {
    fn from(e: SparkleError) -> Self {
        let msg = e.to_string();
        match e {
            SparkleError::RankDeficient { .. }
            | SparkleError::SingularGram { .. }
            | SparkleError::NotConverged { .. }
            | SparkleError::AllShiftsFailed(_) => CliError::Numerical(msg),
            SparkleError::Io(_) | SparkleError::Format(_) => CliError::Io(msg),
            _ => CliError::Config(msg),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Attaches a path to an I/O-flavoured error.
pub fn at_path<T, E: Into<CliError>>(
    r: std::result::Result<T, E>,
    path: &std::path::Path,
) -> CliResult<T> {
    r.map_err(|e| match e.into() {
        CliError::Io(m) => CliError::Io(format!("{}: {m}", path.display())),
        other => other,
    })
}
