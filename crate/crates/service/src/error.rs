use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use revmine::analysis::AnalysisError;
use revmine::collector::CollectorError;
use revmine::dataset::DatasetError;
use revmine::orchestrator::{OrchestratorError, ProviderError, RefinementTranscript, TranscriptFinal};
use revmine::plan::{Issue, ValidationReport};
use revmine::platform_access::{AccessError, ConfigError};
use serde_json::{json, Value};

/// `{error: {code, message, issues?, transcript?}}` with a mirrored status.
#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
    pub issues: Option<Vec<Issue>>,
    pub transcript: Option<Value>,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
            issues: None,
            transcript: None,
        }
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }

    pub fn not_found(what: &str, id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", format!("{what} `{id}` does not exist"))
    }

    pub fn conflict(message: impl Into<String>) -> Self {
        Self::new(StatusCode::CONFLICT, "conflict", message)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }

    pub fn validation(code: &'static str, report: ValidationReport) -> Self {
        let message = report
            .errors()
            .map(|i| format!("{}: {}", i.code, i.message))
            .collect::<Vec<_>>()
            .join("; ");
        Self {
            issues: Some(report.issues),
            ..Self::new(StatusCode::UNPROCESSABLE_ENTITY, code, message)
        }
    }

    pub fn no_provider() -> Self {
        Self::new(
            StatusCode::SERVICE_UNAVAILABLE,
            "provider_unavailable",
            "no LLM provider is configured for this service",
        )
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut err = json!({"code": self.code, "message": self.message});
        if let Some(issues) = self.issues {
            err["issues"] = json!(issues);
        }
        if let Some(t) = self.transcript {
            err["transcript"] = t;
        }
        (self.status, Json(json!({ "error": err }))).into_response()
    }
}

impl From<ConfigError> for ApiError {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::MissingField("token") => Self::new(
                StatusCode::SERVICE_UNAVAILABLE,
                "credentials_missing",
                "the service has no platform token; set it in the environment or the config file",
            ),
            other => Self::bad_request(other.to_string()),
        }
    }
}

impl From<AccessError> for ApiError {
    fn from(e: AccessError) -> Self {
        Self::new(StatusCode::BAD_GATEWAY, "platform_unreachable", e.to_string())
    }
}

impl From<OrchestratorError> for ApiError {
    fn from(e: OrchestratorError) -> Self {
        match e {
            OrchestratorError::Provider(p) => match p {
                ProviderError::Timeout(_) | ProviderError::Transport(_) => {
                    Self::new(StatusCode::SERVICE_UNAVAILABLE, "provider_unavailable", p.to_string())
                }
                other => Self::new(StatusCode::BAD_GATEWAY, "provider_error", other.to_string()),
            },
            OrchestratorError::RefinementExhausted { rounds, last_report } => {
                let message = format!("no valid result after {} rounds", rounds.len());
                let transcript = RefinementTranscript::<()> {
                    rounds,
                    outcome: TranscriptFinal::Exhausted(last_report.clone()),
                };
                Self {
                    issues: last_report.map(|r| r.issues),
                    transcript: Some(json!(transcript)),
                    ..Self::new(StatusCode::UNPROCESSABLE_ENTITY, "refinement_exhausted", message)
                }
            }
            OrchestratorError::AccessNotVerified => {
                Self::new(StatusCode::FORBIDDEN, "access_not_verified", e.to_string())
            }
            OrchestratorError::SecretLeak => Self::bad_request(e.to_string()),
            OrchestratorError::ExtractionFailed(_) => {
                Self::new(StatusCode::UNPROCESSABLE_ENTITY, "extraction_failed", e.to_string())
            }
            OrchestratorError::InvalidConfig(m) => Self::bad_request(m),
        }
    }
}

impl From<AnalysisError> for ApiError {
    fn from(e: AnalysisError) -> Self {
        match e {
            AnalysisError::SpecValidation(report) => Self::validation("spec_validation", report),
            AnalysisError::MissingColumn(_) => Self::new(StatusCode::UNPROCESSABLE_ENTITY, "missing_column", e.to_string()),
            AnalysisError::Archive(a) => Self::internal(a.to_string()),
        }
    }
}

impl From<DatasetError> for ApiError {
    fn from(e: DatasetError) -> Self {
        match e {
            DatasetError::UnknownMetric(_) => Self::new(StatusCode::UNPROCESSABLE_ENTITY, "unknown_metric", e.to_string()),
            other => Self::internal(other.to_string()),
        }
    }
}

impl From<CollectorError> for ApiError {
    fn from(e: CollectorError) -> Self {
        match e {
            CollectorError::InvalidPlan(report) => Self::validation("plan_validation", report),
            CollectorError::RunNotFound(id) => Self::not_found("run", &id),
            CollectorError::Locked { .. } => Self::conflict(e.to_string()),
            other => Self::internal(other.to_string()),
        }
    }
}
