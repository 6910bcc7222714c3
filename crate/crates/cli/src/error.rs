use epd_core::datamodel::DataError;
use epd_core::metrics::MetricError;
use epd_core::numcore::NumError;
use epd_core::train::TrainError;

/// Failure of a command, classified by exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad flags, config keys or values (exit 1).
    #[error("{0}")]
    Usage(String),
    /// Unreadable, malformed or mismatched input files (exit 2).
    #[error("{0}")]
    Data(String),
    /// Non-finite values during training or evaluation (exit 3).
    #[error("{0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::Config(m) => CliError::Usage(m),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<NumError> for CliError {
    fn from(e: NumError) -> Self {
        match e {
            NumError::NonFinite { .. } => CliError::Numeric(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        if e.is_non_finite() {
            CliError::Numeric(format!("training aborted: {e}"))
        } else {
            CliError::Data(e.to_string())
        }
    }
}

impl From<MetricError> for CliError {
    fn from(e: MetricError) -> Self {
        match e {
            MetricError::ZeroK => CliError::Usage(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}
