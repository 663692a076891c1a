//! HTTP/JSON API over a [`ReviewStore`].
//!
//! | Method | Path | |
//! |---|---|---|
//! | GET | `/api/queue?status=&reviewer_id=` | item summaries, oldest first |
//! | GET | `/api/items/{id}` | full item |
//! | POST | `/api/items/{id}/decisions` | record a decision |
//! | GET | `/api/taxonomy` | rejection categories |
//! | GET | `/api/stats` | progress and yield |
//! | POST | `/api/export` | dedup and write the release |
//!
//! Errors are `{"error_code": ..., "message": ...}`. Mutations run on the
//! blocking pool because the store syncs every event to disk before
//! answering.

use std::future::Future;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tokio::net::TcpListener;

use craqan_core::review::{export_dataset, ExportSummary, ItemStatus, ReviewError, ReviewProgress, Verdict};
use craqan_core::{HumanDecision, RejectionCategory, ReviewItem, ReviewStore};

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub addr: SocketAddr,
    /// Where `POST /api/export` writes the release.
    pub export_dir: PathBuf,
    /// Sections attempted by the generation runs, the yield denominator.
    pub attempted_sections: usize,
}

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: SocketAddr, source: std::io::Error },
    #[error("server error: {0}")]
    Serve(std::io::Error),
}

#[derive(Clone)]
struct AppState {
    store: Arc<ReviewStore>,
    export_dir: PathBuf,
    attempted_sections: usize,
}

/// Error body returned by every failing endpoint.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiError {
    pub error_code: String,
    pub message: String,
    #[serde(skip)]
    status: u16,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        Self { error_code: code.to_string(), message: message.into(), status: status.as_u16() }
    }
}

impl From<ReviewError> for ApiError {
    fn from(e: ReviewError) -> Self {
        let status = match &e {
            ReviewError::NotFound(_) => StatusCode::NOT_FOUND,
            ReviewError::DuplicateDecision { .. } | ReviewError::NotPending { .. } => StatusCode::CONFLICT,
            ReviewError::Validation(_) | ReviewError::NotPanelAccepted(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ReviewError::Locked { .. } => StatusCode::SERVICE_UNAVAILABLE,
            ReviewError::Corrupt { .. } | ReviewError::Io { .. } => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self::new(status, e.code(), e.to_string())
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, "validation_error", e.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self)).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

/// Queue entry without the segmented text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemSummary {
    pub item_id: String,
    pub run_id: String,
    pub article_id: String,
    pub section_id: String,
    pub status: ItemStatus,
    pub question: String,
    pub accepts: usize,
    pub rejects: usize,
    pub disputed: bool,
}

impl From<&ReviewItem> for ItemSummary {
    fn from(item: &ReviewItem) -> Self {
        Self {
            item_id: item.item_id.clone(),
            run_id: item.run_id.clone(),
            article_id: item.article_id.clone(),
            section_id: item.section_id.clone(),
            status: item.status,
            question: item.candidate.question.clone(),
            accepts: item.count(Verdict::Accept),
            rejects: item.count(Verdict::Reject),
            disputed: item.is_disputed(),
        }
    }
}

#[derive(Debug, Deserialize)]
struct QueueQuery {
    /// Defaults to `pending`; `all` lists every status.
    status: Option<String>,
    reviewer_id: Option<String>,
}

/// Body of `POST /api/items/{id}/decisions`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecisionRequest {
    pub reviewer_id: String,
    pub verdict: Verdict,
    #[serde(default)]
    pub reason_category: Option<RejectionCategory>,
    #[serde(default)]
    pub free_text: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiveStats {
    #[serde(flatten)]
    pub progress: ReviewProgress,
    pub attempted_sections: usize,
    pub yield_fraction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExportResponse {
    #[serde(flatten)]
    pub summary: ExportSummary,
    pub dropped_duplicates: usize,
}

pub fn router(store: Arc<ReviewStore>, config: &ServiceConfig) -> Router {
    let state = AppState {
        store,
        export_dir: config.export_dir.clone(),
        attempted_sections: config.attempted_sections,
    };
    Router::new()
        .route("/api/queue", get(queue))
        .route("/api/items/{id}", get(item))
        .route("/api/items/{id}/decisions", post(decide))
        .route("/api/taxonomy", get(taxonomy))
        .route("/api/stats", get(stats))
        .route("/api/export", post(export))
        .with_state(state)
}

/// Binds `config.addr`. A busy port is reported here, before serving.
pub async fn bind(config: &ServiceConfig) -> Result<TcpListener, ServiceError> {
    TcpListener::bind(config.addr).await.map_err(|source| ServiceError::Bind { addr: config.addr, source })
}

/// Serves on `listener` until `shutdown` resolves.
pub async fn serve(
    listener: TcpListener,
    store: Arc<ReviewStore>,
    config: &ServiceConfig,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> Result<(), ServiceError> {
    if let Ok(addr) = listener.local_addr() {
        tracing::info!(%addr, log = %store.path().display(), "review service listening");
    }
    axum::serve(listener, router(store, config))
        .with_graceful_shutdown(shutdown)
        .await
        .map_err(ServiceError::Serve)
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ReviewError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?
        .map_err(ApiError::from)
}

fn parse_status(s: &str) -> Result<Option<ItemStatus>, ApiError> {
    if s == "all" {
        return Ok(None);
    }
    serde_json::from_value(serde_json::Value::String(s.to_string())).map(Some).map_err(|_| {
        ApiError::new(
            StatusCode::UNPROCESSABLE_ENTITY,
            "validation_error",
            format!("unknown status {s:?}; expected pending, accepted, rejected, dropped_duplicate or all"),
        )
    })
}

async fn queue(State(app): State<AppState>, Query(q): Query<QueueQuery>) -> ApiResult<Vec<ItemSummary>> {
    let status = parse_status(q.status.as_deref().unwrap_or("pending"))?;
    let state = app.store.state();
    Ok(Json(state.queue(status, q.reviewer_id.as_deref()).into_iter().map(ItemSummary::from).collect()))
}

async fn item(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult<ReviewItem> {
    Ok(Json(app.store.get(&id)?))
}

async fn decide(
    State(app): State<AppState>,
    Path(id): Path<String>,
    body: Result<Json<DecisionRequest>, JsonRejection>,
) -> ApiResult<ReviewItem> {
    let Json(req) = body?;
    let decision = HumanDecision {
        reviewer_id: req.reviewer_id,
        verdict: req.verdict,
        reason_category: req.reason_category,
        free_text: req.free_text.filter(|t| !t.trim().is_empty()),
        decided_at: chrono::Utc::now(),
    };
    let store = app.store.clone();
    Ok(Json(blocking(move || store.record_decision(&id, decision)).await?))
}

async fn taxonomy() -> Json<Vec<&'static str>> {
    Json(RejectionCategory::ALL.iter().map(|c| c.label()).collect())
}

async fn stats(State(app): State<AppState>) -> Json<LiveStats> {
    let progress = app.store.state().progress();
    let attempted = app.attempted_sections;
    let yield_fraction = (attempted > 0).then(|| progress.human_accepted as f64 / attempted as f64);
    Json(LiveStats { progress, attempted_sections: attempted, yield_fraction })
}

async fn export(State(app): State<AppState>) -> ApiResult<ExportResponse> {
    let store = app.store.clone();
    let dir = app.export_dir.clone();
    let response = blocking(move || {
        let result = store.dedup()?;
        let summary = export_dataset(&result.kept, &dir)?;
        Ok(ExportResponse { summary, dropped_duplicates: result.dropped.len() })
    })
    .await?;
    Ok(Json(response))
}
