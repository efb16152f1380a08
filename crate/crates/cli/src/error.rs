use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] dirlayer::Error),
    #[error("output: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NOT_CONVERGED: i32 = 3;
pub const EXIT_INCONCLUSIVE: i32 = 4;

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use dirlayer::Error as E;
        match self {
            CliError::Config(_) | CliError::Json(_) => EXIT_CONFIG,
            CliError::Core(E::NotConverged(_)) => EXIT_NOT_CONVERGED,
            CliError::Core(E::Infeasible(_) | E::Geometry(_) | E::NotInscribed { .. } | E::Invalid(_) | E::Precondition(_)) => EXIT_CONFIG,
            _ => 1,
        }
    }
}
