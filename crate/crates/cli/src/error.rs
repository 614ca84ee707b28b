use serde_json::json;
use thiserror::Error;
use wasep_core::Error as CoreError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error("i/o: {0}")]
    Io(String),
    #[error("{0} acceptance criteria failed")]
    Verify(usize),
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl CliError {
    /// 2 for bad input, 3 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Core(e) => match e {
                CoreError::InvalidParams(_) | CoreError::Domain(_) | CoreError::GridMismatch(_) | CoreError::DimensionTooLarge { .. } => 2,
                _ => 3,
            },
            CliError::Io(_) => 1,
            CliError::Verify(_) => 1,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Validation(_) => "validation",
            CliError::Core(_) if self.exit_code() == 2 => "validation",
            CliError::Core(_) => "numerical",
            CliError::Io(_) => "io",
            CliError::Verify(_) => "verification",
        }
    }

    pub fn record(&self) -> serde_json::Value {
        let detail = match self {
            CliError::Core(e) => format!("{e:?}"),
            other => other.to_string(),
        };
        json!({
            "error": {
                "kind": self.kind(),
                "message": self.to_string(),
                "detail": detail,
                "exit_code": self.exit_code(),
            }
        })
    }
}
