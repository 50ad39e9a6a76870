//! HTTP binding of [`Service`] under `/api/v1`.
//!
//! Session endpoints require the `X-Session-Token` header returned by
//! `POST /sessions`. Errors are `{"error": {"kind", "message"}}`.

use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde_json::json;

use crate::service::{CreateSession, ResponseBody, Service, ServiceError};

pub const TOKEN_HEADER: &str = "x-session-token";

pub struct ApiError(ServiceError);

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        ApiError(e)
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        ApiError(ServiceError::Malformed(e.body_text()))
    }
}

pub fn status_of(e: &ServiceError) -> StatusCode {
    match e {
        ServiceError::UnknownSession(_) | ServiceError::UnknownUtterance(_) => StatusCode::NOT_FOUND,
        ServiceError::BadToken => StatusCode::UNAUTHORIZED,
        ServiceError::Duplicate { .. } | ServiceError::Stale { .. } | ServiceError::SessionDone => StatusCode::CONFLICT,
        ServiceError::Malformed(_) | ServiceError::UnknownUnit(_) => StatusCode::UNPROCESSABLE_ENTITY,
        ServiceError::Log(_) | ServiceError::Replay { .. } => StatusCode::INTERNAL_SERVER_ERROR,
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = status_of(&self.0);
        if status.is_server_error() {
            log::error!("{}", self.0);
        }
        let body = json!({"error": {"kind": self.0.kind(), "message": self.0.to_string()}});
        (status, Json(body)).into_response()
    }
}

type ApiResult = Result<Response, ApiError>;

async fn blocking<T, F>(f: F) -> Result<T, ApiError>
where
    F: FnOnce() -> Result<T, ServiceError> + Send + 'static,
    T: Send + 'static,
{
    match tokio::task::spawn_blocking(f).await {
        Ok(r) => r.map_err(ApiError),
        Err(join) => std::panic::resume_unwind(join.into_panic()),
    }
}

fn token(headers: &HeaderMap) -> Option<String> {
    headers
        .get(TOKEN_HEADER)
        .and_then(|v| v.to_str().ok())
        .map(str::to_string)
}

async fn healthz(State(svc): State<Arc<Service>>) -> Json<serde_json::Value> {
    Json(json!({"status": "ok", "sessions": svc.session_count()}))
}

async fn create_session(State(svc): State<Arc<Service>>, body: Result<Json<CreateSession>, JsonRejection>) -> ApiResult {
    let Json(req) = body?;
    let created = blocking(move || svc.create_session(req)).await?;
    Ok((StatusCode::CREATED, Json(created)).into_response())
}

async fn next(State(svc): State<Arc<Service>>, Path(id): Path<String>, headers: HeaderMap) -> ApiResult {
    let tok = token(&headers);
    let view = blocking(move || svc.next(&id, tok.as_deref())).await?;
    Ok(Json(view).into_response())
}

async fn respond(
    State(svc): State<Arc<Service>>,
    Path(id): Path<String>,
    headers: HeaderMap,
    body: Result<Json<ResponseBody>, JsonRejection>,
) -> ApiResult {
    let tok = token(&headers);
    let Json(body) = body?;
    let view = blocking(move || svc.respond(&id, tok.as_deref(), body)).await?;
    Ok(Json(view).into_response())
}

async fn posterior(State(svc): State<Arc<Service>>, Path(id): Path<String>) -> ApiResult {
    let view = blocking(move || svc.posterior(&id)).await?;
    Ok(Json(view).into_response())
}

async fn export(State(svc): State<Arc<Service>>) -> ApiResult {
    let text = blocking(move || Ok(svc.export())).await?;
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], text).into_response())
}

pub fn router(svc: Arc<Service>) -> Router {
    let v1 = Router::new()
        .route("/healthz", get(healthz))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}/next", get(next))
        .route("/sessions/{id}/responses", post(respond))
        .route("/utterances/{id}/posterior", get(posterior))
        .route("/export/annotations", get(export))
        .with_state(svc);
    Router::new().nest("/api/v1", v1).fallback(|| async {
        (
            StatusCode::NOT_FOUND,
            Json(json!({"error": {"kind": "not_found", "message": "no such endpoint"}})),
        )
    })
}

/// Serves until Ctrl-C.
pub async fn serve(svc: Arc<Service>, bind: &str) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(bind).await?;
    log::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(svc))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
