//! HTTP backends for OpenAI-compatible chat-completion and embedding
//! endpoints, plus construction of the configured backends.

use std::sync::Arc;
use std::time::Duration;

use anyhow::{anyhow, Context};
use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde::Deserialize;
use serde_json::{json, Value};
use svoa_core::embedding::{EmbedError, Embedder, EmbeddingBackend, EmbeddingCache, HashedEmbedder};
use svoa_core::extraction::mock::MockChatBackend;
use svoa_core::extraction::{ChatBackend, ChatError, ChatRequest};
use svoa_core::EmbeddingVector;

use crate::config::{AppConfig, ChatProvider, ChatSection, EmbeddingProvider, EmbeddingSection};

fn read_key(env_var: &str) -> Option<String> {
    if env_var.is_empty() {
        return None;
    }
    std::env::var(env_var).ok().filter(|k| !k.trim().is_empty())
}

fn endpoint(base_url: &str, path: &str) -> String {
    format!("{}/{}", base_url.trim_end_matches('/'), path)
}

fn retryable(status: StatusCode) -> bool {
    status == StatusCode::TOO_MANY_REQUESTS || status.is_server_error()
}

/// Sends `body` to `url`, retrying transport errors, 429 and 5xx with
/// exponential backoff.
fn post_json(
    client: &Client,
    url: &str,
    key: Option<&str>,
    body: &Value,
    attempts: u32,
    initial_backoff: Duration,
) -> Result<Value, String> {
    let attempts = attempts.max(1);
    let mut delay = initial_backoff;
    let mut last = String::new();
    for attempt in 1..=attempts {
        let mut req = client.post(url).json(body);
        if let Some(key) = key {
            req = req.bearer_auth(key);
        }
        let retry = match req.send() {
            Ok(resp) => {
                let status = resp.status();
                if status.is_success() {
                    return resp
                        .json::<Value>()
                        .map_err(|e| format!("{url}: invalid response body: {e}"));
                }
                let text = resp.text().unwrap_or_default();
                last = format!("{url}: HTTP {status}: {}", text.chars().take(300).collect::<String>());
                retryable(status)
            }
            Err(e) => {
                last = format!("{url}: {e}");
                true
            }
        };
        if !retry {
            break;
        }
        if attempt < attempts {
            tracing::warn!(attempt, error = %last, "backend request failed, retrying");
            std::thread::sleep(delay);
            delay *= 2;
        }
    }
    Err(last)
}

fn build_client(timeout_secs: u64) -> anyhow::Result<Client> {
    Client::builder()
        .timeout(Duration::from_secs(timeout_secs.max(1)))
        .build()
        .context("building HTTP client")
}

/// Chat backend for `POST {base_url}/chat/completions`.
pub struct OpenAiChat {
    client: Client,
    url: String,
    key: Option<String>,
    model: String,
    attempts: u32,
    backoff: Duration,
}

impl OpenAiChat {
    pub fn new(section: &ChatSection) -> anyhow::Result<Self> {
        Ok(Self {
            client: build_client(section.timeout_secs)?,
            url: endpoint(&section.base_url, "chat/completions"),
            key: read_key(&section.api_key_env),
            model: section.model.clone(),
            attempts: section.max_attempts,
            backoff: Duration::from_millis(section.initial_backoff_ms),
        })
    }

    pub fn request_body(&self, request: &ChatRequest) -> Value {
        let mut messages = vec![json!({"role": "system", "content": request.system})];
        for shot in &request.few_shot {
            messages.push(json!({"role": "user", "content": shot.user}));
            messages.push(json!({"role": "assistant", "content": shot.assistant}));
        }
        messages.push(json!({"role": "user", "content": request.user}));
        json!({
            "model": self.model,
            "messages": messages,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        })
    }
}

impl ChatBackend for OpenAiChat {
    fn model(&self) -> &str {
        &self.model
    }

    fn complete(&self, request: &ChatRequest) -> Result<String, ChatError> {
        let body = self.request_body(request);
        let resp = post_json(
            &self.client,
            &self.url,
            self.key.as_deref(),
            &body,
            self.attempts,
            self.backoff,
        )
        .map_err(ChatError)?;
        resp.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_owned)
            .ok_or_else(|| ChatError(format!("{}: response has no choices[0].message.content", self.url)))
    }
}

#[derive(Deserialize)]
struct EmbeddingItem {
    #[serde(default)]
    index: Option<usize>,
    embedding: Vec<f64>,
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingItem>,
}

/// Embedding backend for `POST {base_url}/embeddings`. Retries are left to
/// the [`Embedder`], which records the failing batch.
pub struct OpenAiEmbedding {
    client: Client,
    url: String,
    key: Option<String>,
    model_id: String,
    dimension: usize,
}

impl OpenAiEmbedding {
    pub fn new(section: &EmbeddingSection) -> anyhow::Result<Self> {
        Ok(Self {
            client: build_client(section.timeout_secs)?,
            url: endpoint(&section.base_url, "embeddings"),
            key: read_key(&section.api_key_env),
            model_id: section.model_id.clone(),
            dimension: section.dimension,
        })
    }
}

impl EmbeddingBackend for OpenAiEmbedding {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        let body = json!({"model": self.model_id, "input": texts});
        let resp = post_json(&self.client, &self.url, self.key.as_deref(), &body, 1, Duration::ZERO)
            .map_err(EmbedError::Transport)?;
        let mut parsed: EmbeddingResponse = serde_json::from_value(resp)
            .map_err(|e| EmbedError::Transport(format!("{}: malformed embedding response: {e}", self.url)))?;
        if parsed.data.iter().all(|d| d.index.is_some()) {
            parsed.data.sort_by_key(|d| d.index);
        }
        Ok(parsed
            .data
            .into_iter()
            .map(|d| EmbeddingVector::new(d.embedding))
            .collect())
    }
}

pub fn chat_backend(cfg: &AppConfig) -> anyhow::Result<Arc<dyn ChatBackend>> {
    Ok(match cfg.chat.provider {
        ChatProvider::Mock => Arc::new(MockChatBackend::new()),
        ChatProvider::Openai => {
            if read_key(&cfg.chat.api_key_env).is_none() {
                tracing::warn!(var = %cfg.chat.api_key_env, "chat API key variable is unset; sending unauthenticated requests");
            }
            Arc::new(OpenAiChat::new(&cfg.chat)?)
        }
    })
}

pub fn embedding_backend(cfg: &AppConfig) -> anyhow::Result<Arc<dyn EmbeddingBackend>> {
    Ok(match cfg.embedding.provider {
        EmbeddingProvider::Hashed => Arc::new(HashedEmbedder::new(cfg.embedding.dimension)),
        EmbeddingProvider::Openai => {
            if read_key(&cfg.embedding.api_key_env).is_none() {
                tracing::warn!(var = %cfg.embedding.api_key_env, "embedding API key variable is unset; sending unauthenticated requests");
            }
            Arc::new(OpenAiEmbedding::new(&cfg.embedding)?)
        }
    })
}

/// The configured embedding backend with its cache (persistent when
/// `paths.cache` is set).
pub fn embedder(cfg: &AppConfig) -> anyhow::Result<Embedder> {
    let cache = match &cfg.paths.cache {
        Some(path) => EmbeddingCache::open(path).map_err(|e| anyhow!(e))?,
        None => EmbeddingCache::in_memory(),
    };
    Ok(Embedder::new(
        embedding_backend(cfg)?,
        Arc::new(cache),
        cfg.embedding.embed_options(),
    ))
}
