use thiserror::Error;

pub const EXIT_OK: u8 = 0;
pub const EXIT_CONDITION: u8 = 1;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_NOT_CONVERGED: u8 = 3;
pub const EXIT_BUDGET: u8 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("condition failure: {0}")]
    Condition(String),

    #[error(transparent)]
    Core(#[from] chaoslab_core::Error),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        use chaoslab_core::Error as E;
        match self {
            CliError::Condition(_) => EXIT_CONDITION,
            CliError::Core(E::NotConverged { .. } | E::DivergenceDetected { .. }) => EXIT_NOT_CONVERGED,
            CliError::Core(E::BudgetExceeded { .. }) => EXIT_BUDGET,
            _ => EXIT_USAGE,
        }
    }

    /// Squared Picard differences carried by a non-convergence error.
    pub fn picard_trace(&self) -> Option<&[f64]> {
        use chaoslab_core::Error as E;
        match self {
            CliError::Core(E::NotConverged { diffs, .. } | E::DivergenceDetected { diffs, .. }) => Some(diffs),
            _ => None,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
