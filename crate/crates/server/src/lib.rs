//! Annotation service over HTTP.
//!
//! | method | path | body / query | response |
//! |---|---|---|---|
//! | GET | `/tasks/next` | `annotator`, `phase` (1 or 2) | task payload or `{"status":"done"}` |
//! | POST | `/records` | one annotation record | acknowledgement |
//! | GET | `/summary` | | validation statistics per language pair |
//! | GET | `/export` | | every stored record as JSONL |
//! | GET | `/schema` | | JSON Schema of annotation records |
//!
//! Errors come back as `{"error": "..."}` with a 4xx/5xx status.

use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::{Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::json;
use traceaudit_core::annotate::{AnnotationRecord, AnnotationService, Phase, RecordError, ServiceError, RECORD_SCHEMA};

pub struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1 }))).into_response()
    }
}

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        let status = match &e {
            ServiceError::Record(RecordError::Invalid { .. }) => StatusCode::UNPROCESSABLE_ENTITY,
            ServiceError::Record(RecordError::UnknownAnnotator(_)) => StatusCode::FORBIDDEN,
            ServiceError::Record(RecordError::UnknownItem(_)) => StatusCode::NOT_FOUND,
            ServiceError::Record(RecordError::NotServed { .. }) => StatusCode::CONFLICT,
            ServiceError::Store(_) | ServiceError::Stats(_) | ServiceError::OrphanIssue { .. } => {
                log::error!("{e}");
                StatusCode::INTERNAL_SERVER_ERROR
            }
        };
        ApiError(status, e.to_string())
    }
}

#[derive(Debug, Deserialize)]
pub struct NextQuery {
    annotator: String,
    phase: String,
}

async fn next_task(
    State(service): State<Arc<AnnotationService>>,
    Query(q): Query<NextQuery>,
) -> Result<Response, ApiError> {
    let phase: Phase = q.phase.parse().map_err(|e| ApiError(StatusCode::BAD_REQUEST, e))?;
    let task = service.next_task(&q.annotator, phase)?;
    Ok(Json(task).into_response())
}

async fn submit(State(service): State<Arc<AnnotationService>>, body: axum::body::Bytes) -> Result<Response, ApiError> {
    let record: AnnotationRecord = serde_json::from_slice(&body)
        .map_err(|e| ApiError(StatusCode::UNPROCESSABLE_ENTITY, format!("invalid record: {e}")))?;
    let ack = tokio::task::spawn_blocking(move || service.submit(record))
        .await
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    Ok(Json(ack).into_response())
}

async fn summary(State(service): State<Arc<AnnotationService>>) -> Result<Response, ApiError> {
    Ok(Json(service.summary()?).into_response())
}

async fn export(State(service): State<Arc<AnnotationService>>) -> Response {
    ([(header::CONTENT_TYPE, "application/x-ndjson")], service.export()).into_response()
}

async fn schema() -> Response {
    ([(header::CONTENT_TYPE, "application/schema+json")], RECORD_SCHEMA).into_response()
}

pub fn router(service: Arc<AnnotationService>) -> Router {
    Router::new()
        .route("/tasks/next", get(next_task))
        .route("/records", post(submit))
        .route("/summary", get(summary))
        .route("/export", get(export))
        .route("/schema", get(schema))
        .with_state(service)
}

/// Serves until Ctrl-C.
pub async fn serve(addr: SocketAddr, service: Arc<AnnotationService>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("annotation service listening on {}", listener.local_addr()?);
    axum::serve(listener, router(service))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
