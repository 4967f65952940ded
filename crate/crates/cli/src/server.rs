//! HTTP API: `GET /healthz`, `POST /query`, `GET /config` and static assets under `/ui`.

use std::future::Future;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use ragforge_core::eval::Mode;
use ragforge_core::orchestrator::Pipeline;
use ragforge_core::Error;
use serde::Deserialize;
use serde_json::json;
use tokio::net::TcpListener;
use tokio::sync::Semaphore;
use tower_http::services::ServeDir;
use tracing::{error, info};

/// Upper bound on queries executing at once; provider clients apply their own
/// in-flight limits below this.
pub const MAX_CONCURRENT_QUERIES: usize = 32;

#[derive(Clone)]
struct AppState {
    pipeline: Arc<Pipeline>,
    permits: Arc<Semaphore>,
}

#[derive(Debug, Deserialize)]
struct QueryBody {
    question: String,
    #[serde(default)]
    mode: Option<Mode>,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: String,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            status,
            code: code.into(),
            message: message.into(),
        }
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match e.code() {
            "empty_input" => return Self::new(StatusCode::BAD_REQUEST, "empty_question", e.to_string()),
            "provider_unreachable" | "bad_provider_response" => StatusCode::BAD_GATEWAY,
            "provider_refusal" => StatusCode::UNPROCESSABLE_ENTITY,
            "dimension_mismatch" | "invalid_config" => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self::new(status, e.code(), e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({"error": {"code": self.code, "message": self.message}});
        (self.status, Json(body)).into_response()
    }
}

pub fn router(pipeline: Arc<Pipeline>) -> Router {
    let ui_dir = pipeline.config().serve.ui_dir.clone();
    let state = AppState {
        pipeline,
        permits: Arc::new(Semaphore::new(MAX_CONCURRENT_QUERIES)),
    };
    let mut app = Router::new()
        .route("/healthz", get(healthz))
        .route("/query", post(query))
        .route("/config", get(config));
    if let Some(dir) = ui_dir {
        app = app.nest_service("/ui", ServeDir::new(dir));
    }
    app.with_state(state)
}

async fn healthz(State(s): State<AppState>) -> Json<serde_json::Value> {
    Json(json!({"status": "ok", "index_entries": s.pipeline.knowledge_base().len()}))
}

async fn config(State(s): State<AppState>) -> Json<serde_json::Value> {
    Json(serde_json::to_value(s.pipeline.config()).unwrap_or_default())
}

async fn query(State(s): State<AppState>, body: Bytes) -> Result<Response, ApiError> {
    let req: QueryBody = serde_json::from_slice(&body)
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "bad_request", e.to_string()))?;
    if req.question.trim().is_empty() {
        return Err(ApiError::new(
            StatusCode::BAD_REQUEST,
            "empty_question",
            "question must not be empty",
        ));
    }
    let mode = req.mode.unwrap_or(s.pipeline.config().mode);
    let _permit = s
        .permits
        .acquire()
        .await
        .map_err(|_| ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "shutting_down", "service is stopping"))?;
    let pipeline = Arc::clone(&s.pipeline);
    let out = tokio::task::spawn_blocking(move || pipeline.answer_query(&req.question, mode))
        .await
        .map_err(|e| {
            error!(error = %e, "query task failed");
            ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", "query task failed")
        })?;
    match out {
        Ok(r) => Ok(Json(r).into_response()),
        Err(e) => {
            error!(error = %e, "query failed");
            Err(e.into())
        }
    }
}

/// Serves until `shutdown` resolves, then lets in-flight requests finish.
pub async fn serve(
    pipeline: Arc<Pipeline>,
    listener: TcpListener,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    info!(addr = %listener.local_addr()?, entries = pipeline.knowledge_base().len(), "listening");
    axum::serve(listener, router(pipeline))
        .with_graceful_shutdown(shutdown)
        .await
}
