use thiserror::Error;

/// Process exit code for an INCONCLUSIVE verdict anywhere in a run.
pub const EXIT_INCONCLUSIVE: i32 = 2;
/// Process exit code for config and input errors.
pub const EXIT_CONFIG: i32 = 3;
/// Process exit code for I/O and internal failures.
pub const EXIT_FAILURE: i32 = 1;

#[derive(Debug, Error)]
pub enum AppError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] evmix_core::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl AppError {
    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Config(_) | AppError::Csv(_) => EXIT_CONFIG,
            AppError::Core(evmix_core::Error::InvalidParameter(_))
            | AppError::Core(evmix_core::Error::Observations(_))
            | AppError::Core(evmix_core::Error::Unsupported(_)) => EXIT_CONFIG,
            _ => EXIT_FAILURE,
        }
    }
}
