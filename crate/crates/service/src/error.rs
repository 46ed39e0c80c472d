use std::time::Duration;

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use ntl_core::session::SessionError;
use serde::Serialize;
use serde_json::{json, Value};

use crate::dataset::DatasetError;

/// Body of every non-2xx response.
#[derive(Debug, Serialize)]
pub struct ErrorEnvelope {
    pub error_code: &'static str,
    pub message: String,
    pub detail: Value,
}

#[derive(Debug, thiserror::Error)]
pub enum ApiError {
    #[error("unknown session {0:?}")]
    UnknownSession(String),
    #[error("session {0:?} is being modified by another request")]
    Busy(String),
    #[error("invalid request: {message}")]
    BadRequest { status: StatusCode, message: String },
    #[error("invalid scope {0:?}; expected `global` or `topk`")]
    InvalidScope(String),
    #[error("training did not finish within {0:?}")]
    Timeout(Duration),
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("internal error: {0}")]
    Internal(String),
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        ApiError::BadRequest { status: r.status(), message: r.body_text() }
    }
}

impl From<QueryRejection> for ApiError {
    fn from(r: QueryRejection) -> Self {
        ApiError::BadRequest { status: StatusCode::BAD_REQUEST, message: r.body_text() }
    }
}

impl From<tokio::task::JoinError> for ApiError {
    fn from(e: tokio::task::JoinError) -> Self {
        ApiError::Internal(e.to_string())
    }
}

fn session_code(e: &SessionError) -> (StatusCode, &'static str, Value) {
    use SessionError::*;
    let unprocessable = StatusCode::UNPROCESSABLE_ENTITY;
    match e {
        UnknownIteration(i) => (StatusCode::NOT_FOUND, "unknown_iteration", json!({ "iteration": i })),
        UnknownFeature(f) => (unprocessable, "unknown_feature", json!({ "feature": f })),
        InactiveFeature(f) => (unprocessable, "inactive_feature", json!({ "feature": f })),
        AlreadyActive(f) => (unprocessable, "already_active", json!({ "feature": f })),
        LastFeature(f) => (unprocessable, "last_feature", json!({ "feature": f })),
        UnknownCustomer(c) => (unprocessable, "unknown_customer", json!({ "customer_id": c })),
        InvalidCap { customer_id, reason } => {
            (unprocessable, "invalid_cap", json!({ "customer_id": customer_id, "reason": reason }))
        }
        NothingToUndo => (unprocessable, "nothing_to_undo", Value::Null),
        InvalidConfig(r) => (unprocessable, "invalid_config", json!({ "reason": r })),
        UnsplitDataset(s) => (unprocessable, "unsplit_dataset", json!({ "missing_split": s.as_str() })),
        StaleIteration(r) => (StatusCode::CONFLICT, "stale_iteration", json!({ "reason": r })),
        _ => (StatusCode::INTERNAL_SERVER_ERROR, "internal", Value::Null),
    }
}

impl ApiError {
    pub fn parts(&self) -> (StatusCode, &'static str, Value) {
        match self {
            ApiError::UnknownSession(id) => (StatusCode::NOT_FOUND, "unknown_session", json!({ "session_id": id })),
            ApiError::Busy(id) => (StatusCode::CONFLICT, "session_busy", json!({ "session_id": id })),
            ApiError::BadRequest { status, .. } => (*status, "bad_request", Value::Null),
            ApiError::InvalidScope(s) => (StatusCode::BAD_REQUEST, "invalid_scope", json!({ "scope": s })),
            ApiError::Timeout(d) => {
                (StatusCode::SERVICE_UNAVAILABLE, "training_timeout", json!({ "timeout_secs": d.as_secs_f64() }))
            }
            ApiError::Session(e) => session_code(e),
            ApiError::Dataset(DatasetError::Io(_)) | ApiError::Internal(_) => {
                (StatusCode::INTERNAL_SERVER_ERROR, "internal", Value::Null)
            }
            ApiError::Dataset(_) => (StatusCode::UNPROCESSABLE_ENTITY, "invalid_dataset", Value::Null),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, error_code, detail) = self.parts();
        if status.is_server_error() {
            tracing::error!(%self, "request failed");
        }
        (status, Json(ErrorEnvelope { error_code, message: self.to_string(), detail })).into_response()
    }
}
