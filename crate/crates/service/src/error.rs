use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde_json::json;
use twin_core::dialogue::DialogueError;
use twin_core::EngineError;

/// Error body: `{"error": code, "message": text}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
        }
    }

    pub fn validation(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "validation", message)
    }

    pub fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not-found", message)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }

    /// `completed` ticks were applied before the failure.
    pub fn from_engine(err: EngineError, completed: u64) -> Self {
        let message = format!("{err} ({completed} tick(s) completed)");
        match err {
            EngineError::Narrator(_) => Self::new(
                StatusCode::SERVICE_UNAVAILABLE,
                "narrator-unavailable",
                message,
            ),
            EngineError::Clock(_) => Self::new(StatusCode::CONFLICT, "state", message),
            EngineError::InvalidWorld(_) | EngineError::Io(_) => Self::internal(message),
        }
    }
}

impl From<DialogueError> for ApiError {
    fn from(err: DialogueError) -> Self {
        let status = match err.code() {
            "not-found" => StatusCode::NOT_FOUND,
            "state" => StatusCode::CONFLICT,
            "validation" => StatusCode::BAD_REQUEST,
            _ => StatusCode::SERVICE_UNAVAILABLE,
        };
        Self::new(status, err.code(), err.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = Json(json!({"error": self.code, "message": self.message}));
        (self.status, body).into_response()
    }
}
