use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ApiError {
    #[error("run {0} is in progress; the instrument takes one sample at a time")]
    EngineBusy(u64),
    #[error("{0}")]
    InvalidProfile(String),
    #[error("run {0} not found")]
    NotFound(u64),
    #[error("run {0} is not running")]
    NotRunning(u64),
    #[error("configuration cannot change while a run is active")]
    ConfigLocked,
    #[error("{0}")]
    SchemaViolation(String),
    #[error("{0}")]
    BadRequest(String),
    #[error("{0}")]
    Internal(String),
}

/// JSON body of every error response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub message: String,
}

impl ApiError {
    pub fn code(&self) -> &'static str {
        match self {
            ApiError::EngineBusy(_) => "EngineBusy",
            ApiError::InvalidProfile(_) => "InvalidProfile",
            ApiError::NotFound(_) => "NotFound",
            ApiError::NotRunning(_) => "NotRunning",
            ApiError::ConfigLocked => "ConfigLocked",
            ApiError::SchemaViolation(_) => "SchemaViolation",
            ApiError::BadRequest(_) => "BadRequest",
            ApiError::Internal(_) => "Internal",
        }
    }

    pub fn status(&self) -> StatusCode {
        match self {
            ApiError::EngineBusy(_) | ApiError::NotRunning(_) | ApiError::ConfigLocked => {
                StatusCode::CONFLICT
            }
            ApiError::InvalidProfile(_) | ApiError::SchemaViolation(_) => {
                StatusCode::UNPROCESSABLE_ENTITY
            }
            ApiError::NotFound(_) => StatusCode::NOT_FOUND,
            ApiError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ApiError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorBody {
            error: self.code().to_string(),
            message: self.to_string(),
        };
        (self.status(), Json(body)).into_response()
    }
}
