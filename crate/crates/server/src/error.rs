use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use mcae_core::Error;
use serde_json::json;

/// Error response: `{"error": code, "message": text}`.
#[derive(Debug)]
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

    pub fn no_session() -> Self {
        Self::new(
            StatusCode::CONFLICT,
            "no_session",
            "no annotation session is open",
        )
    }

    pub fn invalid(message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid", message)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e {
            Error::UnknownCluster(_) | Error::UnknownMask(_) => {
                Self::new(StatusCode::NOT_FOUND, "not_found", msg)
            }
            Error::InvalidClass(_)
            | Error::NotAMember { .. }
            | Error::Format { .. }
            | Error::InvalidArgument(_) => Self::invalid(msg),
            _ => Self::internal(msg),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (
            self.status,
            Json(json!({ "error": self.code, "message": self.message })),
        )
            .into_response()
    }
}
