use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::Serialize;

use conceptmap_core::hierarchy::HierarchyError;
use conceptmap_core::{AnalyticsError, LayoutError, StoreError};

/// Error body returned by every endpoint: a stable machine-readable code and
/// a message for humans.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorBody {
    pub code: &'static str,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApiError {
    pub status: StatusCode,
    pub body: ErrorBody,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            body: ErrorBody {
                code,
                message: message.into(),
            },
        }
    }

    pub fn bad_request(code: &'static str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, code, message)
    }

    pub fn not_found(code: &'static str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, code, message)
    }

    pub fn not_loaded() -> Self {
        Self::new(StatusCode::SERVICE_UNAVAILABLE, "NOT_LOADED", "no artifact is loaded")
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "INTERNAL", message)
    }

    pub fn bad_level(level: usize) -> Self {
        Self::not_found("BAD_LEVEL", format!("level {level} does not exist"))
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

impl From<HierarchyError> for ApiError {
    fn from(e: HierarchyError) -> Self {
        match e {
            HierarchyError::BadLevel(l) => ApiError::bad_level(l),
            other => ApiError::internal(other.to_string()),
        }
    }
}

impl From<LayoutError> for ApiError {
    fn from(e: LayoutError) -> Self {
        match e {
            LayoutError::UnknownLandmark(_) => ApiError::not_found("UNKNOWN_LANDMARK", e.to_string()),
            LayoutError::EmptySelection => ApiError::bad_request("EMPTY_SELECTION", e.to_string()),
            LayoutError::Hierarchy(h) => h.into(),
            other => ApiError::internal(other.to_string()),
        }
    }
}

impl From<AnalyticsError> for ApiError {
    fn from(e: AnalyticsError) -> Self {
        match e {
            AnalyticsError::MTooLarge { .. } | AnalyticsError::MTooSmall => {
                ApiError::bad_request("BAD_M", e.to_string())
            }
            AnalyticsError::BadThreshold(_) => ApiError::bad_request("BAD_THRESHOLD", e.to_string()),
            AnalyticsError::Hierarchy(h) => h.into(),
            other => ApiError::internal(other.to_string()),
        }
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::UnknownScope(_) => ApiError::not_found("UNKNOWN_SCOPE", e.to_string()),
            StoreError::InvalidAnnotation(_) => ApiError::bad_request("INVALID_ANNOTATION", e.to_string()),
            other => ApiError::internal(other.to_string()),
        }
    }
}
