use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] meanfield::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("tolerance failure: {0}")]
    Tolerance(String),
}

impl CliError {
    /// 1 for bad inputs, 2 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) | CliError::Io(_) => 1,
            CliError::Core(e) if e.is_validation() => 1,
            CliError::Core(_) | CliError::Tolerance(_) => 2,
        }
    }

    pub fn kind(&self) -> &'static str {
        if self.exit_code() == 1 {
            "validation"
        } else {
            "numerical"
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
