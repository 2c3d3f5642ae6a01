use std::fmt;

use revmine::analysis::AnalysisError;
use revmine::archive::ArchiveIoError;
use revmine::collector::CollectorError;
use revmine::dataset::DatasetError;
use revmine::orchestrator::OrchestratorError;
use revmine::plan::{PlanError, ValidationReport};
use revmine::platform_access::{AccessError, ConfigError};

pub const OK: u8 = 0;
pub const USAGE: u8 = 1;
pub const AUTH: u8 = 2;
pub const PARTIAL: u8 = 3;
pub const VALIDATION: u8 = 4;
pub const RUNTIME: u8 = 5;

/// A command that did not succeed: exit code plus a one-line reason.
/// `report` is printed before the message when present.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
    pub report: Option<ValidationReport>,
}

impl Failure {
    pub fn new(code: u8, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
            report: None,
        }
    }

    pub fn usage(message: impl Into<String>) -> Self {
        Self::new(USAGE, message)
    }

    pub fn runtime(message: impl fmt::Display) -> Self {
        Self::new(RUNTIME, message.to_string())
    }

    pub fn invalid(message: impl Into<String>, report: ValidationReport) -> Self {
        Self {
            report: Some(report),
            ..Self::new(VALIDATION, message)
        }
    }
}

pub type Outcome = Result<u8, Failure>;

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Self::usage(e.to_string())
    }
}

impl From<AccessError> for Failure {
    fn from(e: AccessError) -> Self {
        Self::runtime(e)
    }
}

impl From<ArchiveIoError> for Failure {
    fn from(e: ArchiveIoError) -> Self {
        Self::runtime(e)
    }
}

impl From<PlanError> for Failure {
    fn from(e: PlanError) -> Self {
        Self::new(VALIDATION, e.to_string())
    }
}

impl From<OrchestratorError> for Failure {
    fn from(e: OrchestratorError) -> Self {
        let code = match &e {
            OrchestratorError::Provider(_) => RUNTIME,
            OrchestratorError::RefinementExhausted { .. } | OrchestratorError::ExtractionFailed(_) => VALIDATION,
            OrchestratorError::AccessNotVerified => AUTH,
            OrchestratorError::SecretLeak | OrchestratorError::InvalidConfig(_) => USAGE,
        };
        match e {
            OrchestratorError::RefinementExhausted { rounds, last_report } => Self {
                report: last_report,
                ..Self::new(code, format!("no valid result after {} rounds", rounds.len()))
            },
            other => Self::new(code, other.to_string()),
        }
    }
}

impl From<CollectorError> for Failure {
    fn from(e: CollectorError) -> Self {
        match e {
            CollectorError::InvalidPlan(report) => Self::invalid("plan is not valid", report),
            CollectorError::AuthRevoked { .. } => Self::new(AUTH, e.to_string()),
            CollectorError::RunNotFound(_) | CollectorError::NotResumable { .. } => Self::usage(e.to_string()),
            other => Self::runtime(other),
        }
    }
}

impl From<DatasetError> for Failure {
    fn from(e: DatasetError) -> Self {
        match e {
            DatasetError::UnknownMetric(_) => Self::new(VALIDATION, e.to_string()),
            other => Self::runtime(other),
        }
    }
}

impl From<AnalysisError> for Failure {
    fn from(e: AnalysisError) -> Self {
        match e {
            AnalysisError::SpecValidation(report) => Self::invalid("analysis spec is not valid", report),
            AnalysisError::MissingColumn(_) => Self::new(VALIDATION, e.to_string()),
            AnalysisError::Archive(a) => Self::runtime(a),
        }
    }
}
