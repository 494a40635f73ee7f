//! HTTP/JSON session service for the choice and magnitude tasks.
//!
//! Sessions live in memory and are mirrored to line-delimited JSON files
//! in the data directory; every accepted event is appended and synced
//! before the request is acknowledged, and the directory is replayed on
//! startup. The batch fitting and cohort analysis are exposed as well.

mod error;
mod state;

use std::future::Future;
use std::sync::Arc;

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::routing::{get, post};
use axum::{Json, Router};
use chronopref_core::analysis::{build_cohort_report, CohortReport};
use chronopref_core::api::{
    AnalyzeRequest, CreateSession, FitRequest, Instructions, NextTrial, ResponseAccepted, SessionCreated, SessionInfo,
    SessionResults, SubmitResponse,
};
use chronopref_core::fitting::{fit_model, FitResult};
use tokio::net::TcpListener;

pub use error::ApiError;
pub use state::{AppState, ServiceConfig, DATA_DIR_ENV};

type Shared = Arc<AppState>;

pub fn router(state: Shared) -> Router {
    Router::new()
        .route("/health", get(|| async { "ok" }))
        .route("/sessions", post(create_session).get(list_sessions))
        .route("/sessions/{id}", get(session_info))
        .route("/sessions/{id}/next-trial", get(next_trial))
        .route("/sessions/{id}/results", get(results))
        .route("/responses", post(submit))
        .route("/instructions/{lang}", get(instructions))
        .route("/fit", post(fit))
        .route("/analyze", post(analyze))
        .with_state(state)
}

/// Serves until `shutdown` resolves.
pub async fn serve(listener: TcpListener, state: Shared, shutdown: impl Future<Output = ()> + Send + 'static) -> std::io::Result<()> {
    axum::serve(listener, router(state)).with_graceful_shutdown(shutdown).await
}

async fn create_session(State(s): State<Shared>, Json(req): Json<CreateSession>) -> Result<(StatusCode, Json<SessionCreated>), ApiError> {
    Ok((StatusCode::CREATED, Json(s.create_session(req).await?)))
}

async fn list_sessions(State(s): State<Shared>) -> Json<Vec<SessionInfo>> {
    Json(s.list().await)
}

async fn session_info(State(s): State<Shared>, Path(id): Path<String>) -> Result<Json<SessionInfo>, ApiError> {
    Ok(Json(s.info(&id).await?))
}

async fn next_trial(State(s): State<Shared>, Path(id): Path<String>) -> Result<Json<NextTrial>, ApiError> {
    Ok(Json(s.next_trial(&id).await?))
}

async fn results(State(s): State<Shared>, Path(id): Path<String>) -> Result<Json<SessionResults>, ApiError> {
    Ok(Json(s.results(&id).await?))
}

async fn submit(State(s): State<Shared>, Json(req): Json<SubmitResponse>) -> Result<Json<ResponseAccepted>, ApiError> {
    Ok(Json(s.submit(req).await?))
}

async fn instructions(State(s): State<Shared>, Path(lang): Path<String>) -> Result<Json<Instructions>, ApiError> {
    s.instructions(&lang)
        .or_else(|| s.instructions("en"))
        .cloned()
        .map(Json)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "not_found", "no instructions bundled"))
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> chronopref_core::Result<T> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?
        .map_err(ApiError::from)
}

async fn fit(Json(req): Json<FitRequest>) -> Result<Json<FitResult>, ApiError> {
    Ok(Json(blocking(move || fit_model(req.model, &req.data, &req.config)).await?))
}

async fn analyze(Json(req): Json<AnalyzeRequest>) -> Result<Json<CohortReport>, ApiError> {
    Ok(Json(blocking(move || build_cohort_report(&req.subjects, &req.config)).await?))
}
