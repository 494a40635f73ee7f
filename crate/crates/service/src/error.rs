use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use chronopref_core::api::ErrorBody;
use chronopref_core::Error;

#[derive(Debug, thiserror::Error)]
#[error("{code}: {message}")]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self { status, code, message: message.into() }
    }

    pub fn not_found(what: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", format!("unknown session {what}"))
    }

    pub fn unprocessable(message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_payload", message)
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let (status, code) = match &e {
            Error::StaleTrial { .. } => (StatusCode::CONFLICT, "stale_trial"),
            Error::SessionComplete => (StatusCode::CONFLICT, "session_complete"),
            Error::Incomplete(_) => (StatusCode::CONFLICT, "incomplete"),
            Error::CapExceeded { .. } => (StatusCode::CONFLICT, "cap_exceeded"),
            Error::OutOfRange(..) => (StatusCode::UNPROCESSABLE_ENTITY, "out_of_range"),
            Error::Domain(_) | Error::InvalidConfig(_) | Error::UnknownInterval(_) => {
                (StatusCode::UNPROCESSABLE_ENTITY, "invalid_payload")
            }
            Error::DegenerateData(_) | Error::MismatchedData(..) | Error::EmptyCell(_) => {
                (StatusCode::UNPROCESSABLE_ENTITY, "degenerate_data")
            }
            Error::NonConvergence { .. } => (StatusCode::UNPROCESSABLE_ENTITY, "nonconvergence"),
            Error::SchemaMismatch(_) | Error::CorruptEvent(_) | Error::Io(_) => {
                (StatusCode::INTERNAL_SERVER_ERROR, "storage")
            }
        };
        Self::new(status, code, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorBody { error: self.code.to_string(), message: self.message };
        (self.status, Json(body)).into_response()
    }
}
