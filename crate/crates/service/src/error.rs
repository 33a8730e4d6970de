use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use scenclust_core::pipeline::PipelineError;
use scenclust_core::render::RenderError;
use serde_json::json;
use thiserror::Error;

use crate::jobs::Status;

#[derive(Debug, Error)]
pub enum ApiError {
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error("session {id} is {status}")]
    NotReady { id: String, status: Status },
    #[error("{0}")]
    BadWindow(String),
    #[error("{0}")]
    BadRequest(String),
    #[error("worker failed: {0}")]
    Worker(String),
}

impl ApiError {
    pub fn kind(&self) -> &'static str {
        match self {
            ApiError::Pipeline(e) => e.kind(),
            ApiError::NotReady { .. } => "not_ready",
            ApiError::BadWindow(_) => "bad_window",
            ApiError::BadRequest(_) => "bad_request",
            ApiError::Worker(_) => "internal",
        }
    }

    pub fn status(&self) -> StatusCode {
        use PipelineError as P;
        match self {
            ApiError::Pipeline(e) => match e {
                P::UnknownDataset(_) | P::UnknownSession(_) => StatusCode::NOT_FOUND,
                P::BadRange { .. }
                | P::IncompleteSubset
                | P::DatasetMismatch { .. }
                | P::Forest(_)
                | P::EmptySweep => StatusCode::UNPROCESSABLE_ENTITY,
                P::Dataset(_) => StatusCode::BAD_REQUEST,
                P::Render(RenderError::BadWindow { .. }) => StatusCode::RANGE_NOT_SATISFIABLE,
                _ => StatusCode::INTERNAL_SERVER_ERROR,
            },
            ApiError::NotReady { .. } => StatusCode::CONFLICT,
            ApiError::BadWindow(_) => StatusCode::RANGE_NOT_SATISFIABLE,
            ApiError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ApiError::Worker(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl From<RenderError> for ApiError {
    fn from(e: RenderError) -> Self {
        ApiError::Pipeline(e.into())
    }
}

impl From<tokio::task::JoinError> for ApiError {
    fn from(e: tokio::task::JoinError) -> Self {
        ApiError::Worker(e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = self.status();
        if status.is_server_error() {
            log::error!("{self}");
        }
        let body = json!({ "error": { "kind": self.kind(), "message": self.to_string() } });
        (status, Json(body)).into_response()
    }
}
