use std::path::Path;
use std::sync::Arc;

use axum::extract::{Path as UrlPath, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde_json::json;
use tower_http::services::ServeDir;

use crate::service::{BallotRequest, LabelService, ServiceError};

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = match self {
            ServiceError::UnknownRepo(_) | ServiceError::UnknownJudge(_) => StatusCode::NOT_FOUND,
            ServiceError::BlankJudge => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (status, Json(json!({ "error": self.to_string() }))).into_response()
    }
}

type Shared = State<Arc<LabelService>>;

async fn queue(State(svc): Shared, UrlPath(judge): UrlPath<String>) -> Response {
    svc.next_unlabeled(&judge).map(Json).into_response()
}

// Repository names contain a slash, hence the catch-all segment.
async fn repo(State(svc): Shared, UrlPath(name): UrlPath<String>) -> Response {
    svc.repository(&name).map(|r| Json(r.clone())).into_response()
}

async fn ballot(State(svc): Shared, Json(req): Json<BallotRequest>) -> Response {
    svc.submit(req).map(Json).into_response()
}

async fn consensus(State(svc): Shared) -> Response {
    Json(svc.consensus()).into_response()
}

async fn export(State(svc): Shared) -> Response {
    match svc.export() {
        Ok(text) => ([(header::CONTENT_TYPE, "application/x-ndjson")], text).into_response(),
        Err(e) => e.into_response(),
    }
}

async fn progress(State(svc): Shared) -> Response {
    Json(svc.progress()).into_response()
}

/// API routes, plus the built judge UI at `/` when `ui_dir` is given.
pub fn router(service: Arc<LabelService>, ui_dir: Option<&Path>) -> Router {
    let api = Router::new()
        .route("/api/queue/{judge}", get(queue))
        .route("/api/repo/{*name}", get(repo))
        .route("/api/ballot", post(ballot))
        .route("/api/consensus", get(consensus))
        .route("/api/export", get(export))
        .route("/api/progress", get(progress))
        .with_state(service);
    match ui_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}
