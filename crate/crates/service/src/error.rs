use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde_json::json;
use thiserror::Error;

use cvil_core::analytics::AnalyticsError;
use cvil_core::classifier::ClassifierError;
use cvil_core::dataset::DatasetError;
use cvil_core::measures::MeasureError;
use cvil_core::workflow::WorkflowError;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("training in progress")]
    Busy,
    #[error("no trained model yet; POST /train first")]
    NotTrained,
    #[error("no training in progress")]
    NotTraining,
    #[error("not found: {0}")]
    NotFound(String),
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error("snapshot schema version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("snapshot belongs to dataset {found}, loaded dataset is {expected}")]
    FingerprintMismatch { expected: String, found: String },
    #[error("corrupt snapshot: {0}")]
    CorruptSnapshot(String),
    #[error(transparent)]
    Workflow(#[from] WorkflowError),
    #[error(transparent)]
    Measure(#[from] MeasureError),
    #[error(transparent)]
    Analytics(#[from] AnalyticsError),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl ServiceError {
    pub fn code(&self) -> &'static str {
        match self {
            Self::Busy => "busy",
            Self::NotTrained | Self::Workflow(WorkflowError::MissingPrediction(_)) => "not_trained",
            Self::NotTraining => "not_training",
            Self::NotFound(_) => "not_found",
            Self::BadRequest(_) => "bad_request",
            Self::VersionMismatch { .. } => "version_mismatch",
            Self::FingerprintMismatch { .. } => "fingerprint_mismatch",
            Self::CorruptSnapshot(_) => "corrupt_snapshot",
            Self::Workflow(WorkflowError::BootstrapIncomplete)
            | Self::Classifier(ClassifierError::BootstrapIncomplete(_)) => "bootstrap_incomplete",
            Self::Workflow(WorkflowError::NoFocus) | Self::Measure(MeasureError::NoLabeledReference(_)) => {
                "precondition"
            }
            Self::Workflow(_) | Self::Measure(_) | Self::Analytics(_) => "invalid",
            Self::Classifier(_) => "classifier",
            Self::Dataset(_) => "dataset",
            Self::Io(_) => "io",
            Self::Json(_) => "json",
        }
    }

    pub fn status(&self) -> StatusCode {
        match self.code() {
            "busy" | "not_trained" | "not_training" | "bootstrap_incomplete" | "precondition" => {
                StatusCode::CONFLICT
            }
            "not_found" => StatusCode::NOT_FOUND,
            "bad_request" | "json" => StatusCode::BAD_REQUEST,
            "version_mismatch" | "fingerprint_mismatch" | "corrupt_snapshot" | "invalid" => {
                StatusCode::UNPROCESSABLE_ENTITY
            }
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let body = json!({ "error": self.code(), "message": self.to_string() });
        (self.status(), Json(body)).into_response()
    }
}
