use serde::Serialize;
use serde_json::Value;
use thiserror::Error;

pub const EXIT_OK: u8 = 0;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_NUMERIC: u8 = 3;
pub const EXIT_PARTIAL_SWEEP: u8 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    /// Parsing or validating the job description.
    Config,
    /// A library computation failed.
    Compute,
    /// Writing the result failed.
    Output,
}

/// Structured failure record, serialized as `{"error": {...}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Error)]
#[error("{stage:?} error{}: {message}", field.as_deref().map(|f| format!(" at {f}")).unwrap_or_default())]
pub struct JobError {
    pub stage: Stage,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub field: Option<String>,
    pub message: String,
    pub value: Value,
}

impl JobError {
    pub fn config(field: &str, message: impl Into<String>, value: impl Into<Value>) -> Self {
        JobError {
            stage: Stage::Config,
            field: (!field.is_empty()).then(|| field.to_string()),
            message: message.into(),
            value: value.into(),
        }
    }

    pub fn compute(message: impl Into<String>, value: impl Into<Value>) -> Self {
        JobError {
            stage: Stage::Compute,
            field: None,
            message: message.into(),
            value: value.into(),
        }
    }

    pub fn output(message: impl Into<String>, path: &str) -> Self {
        JobError {
            stage: Stage::Output,
            field: Some("output.path".into()),
            message: message.into(),
            value: path.into(),
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self.stage {
            Stage::Config | Stage::Output => EXIT_CONFIG,
            Stage::Compute => EXIT_NUMERIC,
        }
    }

    pub fn to_json(&self) -> Value {
        serde_json::json!({ "error": self })
    }
}
