use serde::Serialize;
use serde_json::Value;
use wedgedisc_core::Error;

/// Process exit codes.
pub const EXIT_OK: i32 = 0;
pub const EXIT_PROPERTY: i32 = 1;
pub const EXIT_SPEC: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

/// Structured failure written to stderr and, when requested, to the report
/// path.
#[derive(Debug, Clone, Serialize)]
pub struct CliError {
    pub stage: String,
    pub message: String,
    pub details: Value,
    #[serde(skip)]
    pub exit_code: i32,
}

impl CliError {
    pub fn new(code: i32, stage: &str, message: String) -> Self {
        Self {
            stage: stage.into(),
            message,
            details: Value::Null,
            exit_code: code,
        }
    }

    pub fn spec(stage: &str, message: String) -> Self {
        Self::new(EXIT_SPEC, stage, message)
    }

    pub fn property(stage: &str, message: String) -> Self {
        Self::new(EXIT_PROPERTY, stage, message)
    }

    pub fn io(stage: &str, message: String) -> Self {
        Self::new(EXIT_NUMERICAL, stage, message)
    }

    pub fn with_details(mut self, details: Value) -> Self {
        self.details = details;
        self
    }

    /// Maps an engine error raised during `stage` to its exit class.
    pub fn core(stage: &str, e: Error) -> Self {
        let code = match e {
            Error::InvalidGrid(_) | Error::SizeMismatch { .. } | Error::InvalidManifold(_) | Error::InvalidParameter(_) => {
                EXIT_SPEC
            }
            Error::Precondition(_) | Error::Verification(_) => EXIT_PROPERTY,
            _ => EXIT_NUMERICAL,
        };
        let details = match &e {
            Error::NotConverged { iterations, residual } => {
                serde_json::json!({ "iterations": iterations, "residual": finite(*residual) })
            }
            Error::DomainEscape { iteration, node } => serde_json::json!({ "iteration": iteration, "node": node }),
            Error::OracleFailure { phi, .. } => serde_json::json!({ "phi": phi }),
            Error::RankDeficient { phi, rank, expected } => {
                serde_json::json!({ "phi": phi, "rank": rank, "expected": expected })
            }
            Error::OutOfDomain { norm, radius } => serde_json::json!({ "norm": norm, "radius": radius }),
            _ => Value::Null,
        };
        Self::new(code, stage, e.to_string()).with_details(details)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&serde_json::json!({ "error": self })).expect("error serializes")
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.stage, self.message)
    }
}

impl std::error::Error for CliError {}

fn finite(v: f64) -> Value {
    if v.is_finite() {
        Value::from(v)
    } else {
        Value::Null
    }
}

/// Attaches a stage name to engine errors.
pub trait Stage<T> {
    fn stage(self, stage: &str) -> Result<T, CliError>;
}

impl<T> Stage<T> for wedgedisc_core::Result<T> {
    fn stage(self, stage: &str) -> Result<T, CliError> {
        self.map_err(|e| CliError::core(stage, e))
    }
}
