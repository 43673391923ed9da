use axum::extract::rejection::JsonRejection;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::{Deserialize, Serialize};

use mindrel_core::data::DataError;
use mindrel_core::Error as CoreError;

/// Body of every non-2xx response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field: Option<String>,
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub body: ErrorBody,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        Self {
            status,
            body: ErrorBody {
                code: code.to_owned(),
                message: message.into(),
                field: None,
            },
        }
    }

    pub fn with_field(mut self, field: impl Into<String>) -> Self {
        self.body.field = Some(field.into());
        self
    }

    pub fn not_found(id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", format!("no session `{id}`"))
    }

    pub fn busy(id: &str) -> Self {
        Self::new(
            StatusCode::CONFLICT,
            "conflict",
            format!("session `{id}` has another update in flight"),
        )
    }

    pub fn invalid(field: &str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "invalid_argument", message).with_field(field)
    }
}

impl From<CoreError> for ApiError {
    fn from(e: CoreError) -> Self {
        let msg = e.to_string();
        match &e {
            CoreError::SessionTerminal => Self::new(StatusCode::CONFLICT, "session_decided", msg),
            CoreError::NothingToReveal => Self::new(StatusCode::CONFLICT, "nothing_to_reveal", msg),
            CoreError::UnknownSelector(_) => Self::invalid("selector", msg),
            CoreError::Data(DataError::UnknownFeature(name)) => {
                Self::new(StatusCode::BAD_REQUEST, "unknown_feature", msg).with_field(name.clone())
            }
            CoreError::InvalidArgument(_) | CoreError::Data(_) => {
                Self::new(StatusCode::BAD_REQUEST, "invalid_argument", msg)
            }
            _ if e.is_numerical() => Self::new(StatusCode::UNPROCESSABLE_ENTITY, "numerical", msg),
            _ => Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", msg),
        }
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", r.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}
