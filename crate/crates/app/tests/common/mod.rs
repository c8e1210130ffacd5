#![allow(dead_code)]

use std::path::Path;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Arc;

use axum::extract::State;
use axum::http::StatusCode;
use axum::routing::post;
use axum::{Json, Router};
use serde_json::{json, Value};
use svoa_app::config::{AppConfig, ChatProvider, EmbeddingProvider};
use svoa_core::embedding::{EmbeddingBackend, HashedEmbedder};
use svoa_core::eval::{generate_synthetic, SyntheticConfig, SyntheticData};
use svoa_core::extraction::mock::MockChatBackend;
use svoa_core::extraction::{ChatBackend, ChatRequest};

pub const DIM: usize = 256;

/// Counters and switches shared with the mock server.
#[derive(Default)]
pub struct Backend {
    pub chat_calls: AtomicUsize,
    pub embed_calls: AtomicUsize,
    /// Every request fails with 503 while set.
    pub down: AtomicBool,
    /// Chat requests beyond this count fail with 503 (0 = unlimited).
    pub chat_budget: AtomicUsize,
    /// Number of upcoming chat requests answered with 500 before recovering.
    pub chat_flaky: AtomicUsize,
    pub last_chat_body: std::sync::Mutex<Option<Value>>,
}

pub struct MockServer {
    pub base_url: String,
    pub backend: Arc<Backend>,
}

fn unavailable() -> (StatusCode, Json<Value>) {
    (StatusCode::SERVICE_UNAVAILABLE, Json(json!({"error": "down"})))
}

async fn chat(State(b): State<Arc<Backend>>, Json(body): Json<Value>) -> (StatusCode, Json<Value>) {
    let n = b.chat_calls.fetch_add(1, Ordering::SeqCst) + 1;
    *b.last_chat_body.lock().unwrap() = Some(body.clone());
    let budget = b.chat_budget.load(Ordering::SeqCst);
    if b.down.load(Ordering::SeqCst) || (budget > 0 && n > budget) {
        return unavailable();
    }
    if b.chat_flaky
        .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |v| v.checked_sub(1))
        .is_ok()
    {
        return (StatusCode::INTERNAL_SERVER_ERROR, Json(json!({"error": "flaky"})));
    }
    let messages = body["messages"].as_array().cloned().unwrap_or_default();
    let request = ChatRequest {
        system: messages
            .first()
            .and_then(|m| m["content"].as_str())
            .unwrap_or("")
            .to_owned(),
        few_shot: Vec::new(),
        user: messages
            .last()
            .and_then(|m| m["content"].as_str())
            .unwrap_or("")
            .to_owned(),
        temperature: body["temperature"].as_f64().unwrap_or(1.0),
        max_tokens: body["max_tokens"].as_u64().unwrap_or(0) as u32,
    };
    match MockChatBackend::new().complete(&request) {
        Ok(content) => (
            StatusCode::OK,
            Json(json!({"choices": [{"index": 0, "message": {"role": "assistant", "content": content}}]})),
        ),
        Err(e) => (StatusCode::BAD_REQUEST, Json(json!({"error": e.to_string()}))),
    }
}

/// Answers with items in reverse order, each tagged with its input index.
async fn embeddings(State(b): State<Arc<Backend>>, Json(body): Json<Value>) -> (StatusCode, Json<Value>) {
    b.embed_calls.fetch_add(1, Ordering::SeqCst);
    if b.down.load(Ordering::SeqCst) {
        return unavailable();
    }
    let texts: Vec<String> = body["input"]
        .as_array()
        .map(|a| a.iter().filter_map(|t| t.as_str().map(str::to_owned)).collect())
        .unwrap_or_default();
    let vectors = HashedEmbedder::new(DIM).embed_batch(&texts).unwrap();
    let data: Vec<Value> = vectors
        .iter()
        .enumerate()
        .rev()
        .map(|(i, v)| json!({"object": "embedding", "index": i, "embedding": v.values()}))
        .collect();
    (StatusCode::OK, Json(json!({"data": data, "model": body["model"]})))
}

impl MockServer {
    pub fn start() -> Self {
        let backend = Arc::new(Backend::default());
        let app = Router::new()
            .route("/v1/chat/completions", post(chat))
            .route("/v1/embeddings", post(embeddings))
            .with_state(backend.clone());
        let std_listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        std_listener.set_nonblocking(true).unwrap();
        let addr = std_listener.local_addr().unwrap();
        std::thread::spawn(move || {
            let rt = tokio::runtime::Builder::new_current_thread()
                .enable_all()
                .build()
                .unwrap();
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::from_std(std_listener).unwrap();
                axum::serve(listener, app).await.unwrap();
            });
        });
        Self {
            base_url: format!("http://{addr}/v1"),
            backend,
        }
    }

    /// Config pointing both backends at this server.
    pub fn config(&self) -> AppConfig {
        let mut cfg = AppConfig::default();
        cfg.chat.provider = ChatProvider::Openai;
        cfg.chat.base_url = self.base_url.clone();
        cfg.chat.api_key_env = String::new();
        cfg.chat.max_attempts = 2;
        cfg.chat.initial_backoff_ms = 1;
        cfg.chat.timeout_secs = 10;
        cfg.embedding.provider = EmbeddingProvider::Openai;
        cfg.embedding.base_url = self.base_url.clone();
        cfg.embedding.api_key_env = String::new();
        cfg.embedding.model_id = "mock-embedding".into();
        cfg.embedding.dimension = DIM;
        cfg.embedding.max_attempts = 2;
        cfg.embedding.initial_backoff_ms = 1;
        cfg.embedding.timeout_secs = 10;
        cfg
    }
}

pub fn synthetic(conversations: usize, queries: usize, seed: u64) -> SyntheticData {
    generate_synthetic(&SyntheticConfig {
        seed,
        conversations,
        queries,
        utterances_per_conversation: 8.0,
        relevant_per_query: 3.0,
    })
}

pub fn offline_config(cache: Option<&Path>) -> AppConfig {
    let mut cfg = AppConfig::offline(DIM);
    cfg.paths.cache = cache.map(Path::to_path_buf);
    cfg
}
