use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde_json::{json, Value};
use tandem_core::Error;

/// An error response: status code plus a JSON body
/// `{"error": kind, "message": text, ...details}`.
#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub body: Value,
}

impl ApiError {
    pub fn new(status: StatusCode, kind: &str, message: impl Into<String>) -> Self {
        Self { status, body: json!({ "error": kind, "message": message.into() }) }
    }

    pub fn not_found(what: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", what)
    }

    pub fn conflict(message: impl Into<String>) -> Self {
        Self::new(StatusCode::CONFLICT, "conflict", message)
    }

    pub fn unprocessable(message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_request", message)
    }

    pub fn unauthorized() -> Self {
        Self::new(StatusCode::UNAUTHORIZED, "unauthorized", "missing or wrong bearer token")
    }

    pub fn with(mut self, key: &str, value: Value) -> Self {
        self.body[key] = value;
        self
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let message = e.to_string();
        match e {
            Error::State(_) => ApiError::conflict(message),
            Error::InvalidConfig(issues) => {
                ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_config", message).with("issues", json!(issues))
            }
            Error::Config(_) => ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "config", message),
            Error::Parse { line, .. } => {
                ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "parse", message).with("line", json!(line))
            }
            Error::BatchMismatch { missing, extra } => ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "batch_mismatch", message)
                .with("missing", json!(missing))
                .with("extra", json!(extra)),
            Error::Validation(issues) => {
                ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "validation", message).with("issues", json!(issues))
            }
            Error::Data { .. } | Error::Request(_) | Error::InputTooLong { .. } | Error::Usage(_) => {
                ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_request", message)
            }
            Error::Shape(_)
            | Error::Checksum { .. }
            | Error::Version { .. }
            | Error::Job(_)
            | Error::Io { .. }
            | Error::Json(_) => {
                tracing::error!("{message}");
                ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
            }
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

pub type ApiResult<T> = Result<T, ApiError>;
