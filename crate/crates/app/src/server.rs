//! JSON HTTP service over a loaded index.
//!
//! Queries work on a snapshot of the index; removals and reloads take the
//! write lock, so a query sees the index either before or after a change.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;
use svoa_core::embedding::Embedder;
use svoa_core::extraction::ExtractionWarning;
use svoa_core::index::{persist, IndexError, IndexStats, IndexedQuadruplet, Manifest};
use svoa_core::{ComponentKind, Message, QuadrupletRef, SvoaQuadruplet};
use tokio::sync::{Mutex, RwLock, Semaphore};

use crate::config::AppConfig;
use crate::query::{LoadedIndex, PreparedQuery, QueryError, QueryRequest};

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }

    fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, message)
    }

    fn reloading() -> Self {
        Self::new(StatusCode::SERVICE_UNAVAILABLE, "index is reloading")
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

impl From<QueryError> for ApiError {
    fn from(e: QueryError) -> Self {
        match e {
            QueryError::BadRequest(m) => Self::bad_request(m),
            QueryError::Embedding(e) => Self::new(StatusCode::BAD_GATEWAY, e.to_string()),
            QueryError::Scoring(e) => Self::internal(e.to_string()),
        }
    }
}

fn join_error(e: tokio::task::JoinError) -> ApiError {
    ApiError::internal(format!("worker task failed: {e}"))
}

fn parse_body<T: for<'de> Deserialize<'de>>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("malformed request body: {e}")))
}

pub struct AppState {
    index: Arc<RwLock<Arc<LoadedIndex>>>,
    reloading: AtomicBool,
    /// Serializes removals and reloads.
    writer: Mutex<()>,
    embed_permits: Semaphore,
    embedder: Embedder,
    config: AppConfig,
    index_path: Option<PathBuf>,
}

impl AppState {
    /// `index_path` is where removals are persisted and reloads read from.
    pub fn new(index: LoadedIndex, embedder: Embedder, config: AppConfig, index_path: Option<PathBuf>) -> Self {
        let permits = config.server.max_concurrent_embeddings.max(1);
        Self {
            index: Arc::new(RwLock::new(Arc::new(index))),
            reloading: AtomicBool::new(false),
            writer: Mutex::new(()),
            embed_permits: Semaphore::new(permits),
            embedder,
            config,
            index_path,
        }
    }

    pub fn is_reloading(&self) -> bool {
        self.reloading.load(Ordering::SeqCst)
    }

    /// Marks the index unavailable; data endpoints answer 503 meanwhile.
    pub fn set_reloading(&self, on: bool) {
        self.reloading.store(on, Ordering::SeqCst);
    }

    pub async fn snapshot(&self) -> Arc<LoadedIndex> {
        self.index.read().await.clone()
    }

    fn available(&self) -> Result<(), ApiError> {
        if self.is_reloading() {
            Err(ApiError::reloading())
        } else {
            Ok(())
        }
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/query", post(query))
        .route("/conversations/{id}", get(conversation))
        .route("/stats", get(stats))
        .route("/indices/remove", post(remove))
        .route("/reload", post(reload))
        .with_state(state)
}

async fn healthz(State(state): State<Arc<AppState>>) -> Json<serde_json::Value> {
    let status = if state.is_reloading() { "reloading" } else { "ok" };
    Json(json!({ "status": status }))
}

async fn query(State(state): State<Arc<AppState>>, body: Bytes) -> Result<Response, ApiError> {
    state.available()?;
    let req: QueryRequest = parse_body(&body)?;
    let prepared = PreparedQuery::new(&req, &state.config)?;

    let vector = {
        let _permit = state
            .embed_permits
            .acquire()
            .await
            .map_err(|_| ApiError::internal("embedding pool closed"))?;
        let embedder = state.embedder.clone();
        let text = prepared.text.clone();
        tokio::task::spawn_blocking(move || embedder.embed_one(&text))
            .await
            .map_err(join_error)?
            .map_err(QueryError::from)?
    };

    state.available()?;
    let index = state.snapshot().await;
    let resp = tokio::task::spawn_blocking(move || prepared.execute(&index, &vector))
        .await
        .map_err(join_error)??;
    Ok(Json(resp).into_response())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InstanceView {
    pub text: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub source_message_index: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub quadruplet_ref: Option<QuadrupletRef>,
}

/// A conversation as indexed, without vectors.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConversationView {
    pub conv_id: String,
    pub messages: Vec<Message>,
    pub quadruplets: Vec<IndexedQuadruplet>,
    pub warnings: Vec<ExtractionWarning>,
    pub instances: BTreeMap<ComponentKind, Vec<InstanceView>>,
}

async fn conversation(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Response, ApiError> {
    state.available()?;
    let index = state.snapshot().await;
    let entry = index
        .store
        .get(&id)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown conversation {id:?}")))?;
    let instances = ComponentKind::ALL
        .iter()
        .map(|&kind| {
            let views = entry
                .instances(kind)
                .iter()
                .map(|i| InstanceView {
                    text: i.text.clone(),
                    source_message_index: i.source_message_index,
                    quadruplet_ref: i.quadruplet_ref.clone(),
                })
                .collect();
            (kind, views)
        })
        .collect();
    Ok(Json(ConversationView {
        conv_id: entry.conv_id().to_owned(),
        messages: entry.conversation.messages().to_vec(),
        quadruplets: entry.quadruplets.clone(),
        warnings: entry.warnings.clone(),
        instances,
    })
    .into_response())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StatsView {
    pub manifest: Manifest,
    #[serde(flatten)]
    pub stats: IndexStats,
}

async fn stats(State(state): State<Arc<AppState>>) -> Result<Json<StatsView>, ApiError> {
    state.available()?;
    let index = state.snapshot().await;
    Ok(Json(StatsView {
        manifest: index.store.manifest().clone(),
        stats: index.store.stats(),
    }))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RemoveRequest {
    quadruplet_ref: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RemoveResponse {
    pub removed: QuadrupletRef,
    pub quadruplet: SvoaQuadruplet,
}

async fn remove(State(state): State<Arc<AppState>>, body: Bytes) -> Result<Json<RemoveResponse>, ApiError> {
    state.available()?;
    let req: RemoveRequest = parse_body(&body)?;
    let id = QuadrupletRef::from(req.quadruplet_ref);
    let _writer = state.writer.lock().await;
    state.available()?;

    let mut guard = state.index.clone().write_owned().await;
    let target = id.clone();
    let (guard, removed) = tokio::task::spawn_blocking(move || {
        let index = Arc::make_mut(&mut *guard);
        let removed = index.store.remove_index(&target);
        (guard, removed)
    })
    .await
    .map_err(join_error)?;
    let snapshot = guard.clone();
    drop(guard);
    let quadruplet = removed.map_err(|e| match e {
        IndexError::UnknownQuadruplet(r) => ApiError::new(StatusCode::NOT_FOUND, format!("unknown quadruplet {r}")),
        other => ApiError::internal(other.to_string()),
    })?;

    if let (true, Some(path)) = (state.config.server.persist_removals, state.index_path.clone()) {
        tokio::task::spawn_blocking(move || persist(&snapshot.store, &path))
            .await
            .map_err(join_error)?
            .map_err(|e| ApiError::internal(format!("index updated in memory but not persisted: {e}")))?;
    }
    Ok(Json(RemoveResponse {
        removed: id,
        quadruplet,
    }))
}

async fn reload(State(state): State<Arc<AppState>>) -> Result<Json<serde_json::Value>, ApiError> {
    let path = state
        .index_path
        .clone()
        .ok_or_else(|| ApiError::bad_request("service has no index file to reload from"))?;
    let _writer = state.writer.lock().await;
    state.set_reloading(true);
    let embedder = state.embedder.clone();
    let loaded = tokio::task::spawn_blocking(move || LoadedIndex::open(&path, &embedder)).await;
    let result = match loaded {
        Ok(Ok(index)) => {
            let conversations = index.store.len();
            *state.index.write().await = Arc::new(index);
            Ok(Json(json!({ "status": "reloaded", "conversations": conversations })))
        }
        Ok(Err(e)) => Err(ApiError::internal(format!(
            "reload failed, keeping the current index: {e}"
        ))),
        Err(e) => Err(join_error(e)),
    };
    state.set_reloading(false);
    result
}

/// Serves until ctrl-c.
pub async fn serve(state: Arc<AppState>, listener: tokio::net::TcpListener) -> std::io::Result<()> {
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
