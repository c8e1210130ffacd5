mod common;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use common::{offline_config, synthetic, DIM};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use svoa_app::config::AppConfig;
use svoa_app::query::{run_query, LoadedIndex, QueryRequest, QueryResponse};
use svoa_app::server::{router, AppState};
use svoa_core::embedding::{EmbedError, Embedder, EmbeddingBackend, EmbeddingCache, HashedEmbedder};
use svoa_core::eval::SyntheticData;
use svoa_core::extraction::mock::MockChatBackend;
use svoa_core::extraction::ExtractionConfig;
use svoa_core::index::{load, persist, Ingestor, Manifest, SemanticIndexStore};
use svoa_core::{ComponentKind, EmbeddingVector};
use tower::ServiceExt;

fn build_store(data: &SyntheticData, embedder: &Embedder) -> SemanticIndexStore {
    let chat = MockChatBackend::new();
    let ingestor = Ingestor::new(ExtractionConfig::default(), &chat, embedder);
    let mut store = SemanticIndexStore::new(ingestor.manifest(0));
    for conv in &data.corpus {
        store.insert(ingestor.ingest(conv).unwrap()).unwrap();
    }
    store
}

struct Fixture {
    state: Arc<AppState>,
    app: Router,
    embedder: Embedder,
    cfg: AppConfig,
    data: SyntheticData,
    _dir: tempfile::TempDir,
    path: std::path::PathBuf,
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let data = synthetic(40, 6, 11);
    let embedder = Embedder::hashed(DIM);
    let store = build_store(&data, &embedder);
    let path = dir.path().join("index.jsonl");
    persist(&store, &path).unwrap();
    let cfg = offline_config(None);
    let state = Arc::new(AppState::new(
        LoadedIndex::new(store),
        embedder.clone(),
        cfg.clone(),
        Some(path.clone()),
    ));
    Fixture {
        app: router(state.clone()),
        state,
        embedder,
        cfg,
        data,
        _dir: dir,
        path,
    }
}

async fn send(app: &Router, method: &str, uri: &str, body: Option<&str>) -> (StatusCode, Value) {
    let mut req = Request::builder().method(method).uri(uri);
    if body.is_some() {
        req = req.header("content-type", "application/json");
    }
    let req = req.body(Body::from(body.unwrap_or("").to_owned())).unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into()))
    };
    (status, value)
}

#[tokio::test]
async fn healthz_and_stats() {
    let f = fixture();
    let (s, v) = send(&f.app, "GET", "/healthz", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["status"], "ok");

    let (s, v) = send(&f.app, "GET", "/stats", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["conversations"], 40);
    assert_eq!(v["manifest"]["dimension"], DIM);
    assert!(v["instances"]["svoa"].as_u64().unwrap() > 0);
}

#[tokio::test]
async fn stats_on_empty_index_are_zero() {
    let embedder = Embedder::hashed(DIM);
    let store = SemanticIndexStore::new(Manifest::new(embedder.model_id(), DIM, Default::default(), 0));
    let state = Arc::new(AppState::new(
        LoadedIndex::new(store),
        embedder,
        offline_config(None),
        None,
    ));
    let app = router(state);
    let (s, v) = send(&app, "GET", "/stats", None).await;
    assert_eq!(s, StatusCode::OK);
    for key in ["conversations", "messages", "quadruplets", "warnings"] {
        assert_eq!(v[key], 0, "{key}");
    }
    for kind in ["conversation", "message", "sv", "svo", "svoa"] {
        assert_eq!(v["instances"][kind], 0, "{kind}");
    }
    let (s, v) = send(&app, "POST", "/query", Some(r#"{"text":"anything"}"#)).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["results"], json!([]));
    let (s, _) = send(&app, "POST", "/reload", None).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn query_matches_cli_path() {
    let f = fixture();
    let index = LoadedIndex::new(load(&f.path).unwrap());
    for q in &f.data.queries {
        for combination in ["sv_svo_svoa_conv_msg", "svoa_conv_msg", "sv"] {
            let req = QueryRequest {
                text: q.text.clone(),
                top_k: Some(5),
                combination: Some(combination.into()),
                weights: Some([("svoa".to_owned(), 1.5)].into()),
                bm25_weight: Some(0.3),
            };
            let direct = run_query(&index, &f.embedder, &req, &f.cfg).unwrap();
            let body = serde_json::to_string(&req).unwrap();
            let (s, v) = send(&f.app, "POST", "/query", Some(&body)).await;
            assert_eq!(s, StatusCode::OK, "{v}");
            let served: QueryResponse = serde_json::from_value(v).unwrap();
            assert_eq!(served, direct);
        }
    }
}

#[tokio::test]
async fn query_defaults_come_from_config() {
    let f = fixture();
    let q = &f.data.queries[0];
    let (s, v) = send(&f.app, "POST", "/query", Some(&json!({"text": q.text}).to_string())).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["combination"], "sv_svo_svoa_conv_msg");
    assert_eq!(v["top_k"], 10);
    assert_eq!(v["results"].as_array().unwrap().len(), 10);
    let top = v["results"][0]["conv_id"].as_str().unwrap();
    assert!(q.relevant_conv_ids.iter().any(|r| r == top));
}

#[tokio::test]
async fn malformed_requests_are_400() {
    let f = fixture();
    let cases = [
        "not json",
        r#"{"text": 5}"#,
        r#"{"top_k": 3}"#,
        r#"{"text": "  "}"#,
        r#"{"text": "hi", "top_k": 0}"#,
        r#"{"text": "hi", "combination": "bogus"}"#,
        r#"{"text": "hi", "weights": {"verb": 1.0}}"#,
        r#"{"text": "hi", "weights": {"sv": -1.0}}"#,
        r#"{"text": "hi", "bm25_weight": -0.5}"#,
        r#"{"text": "hi", "surprise": true}"#,
    ];
    for body in cases {
        let (s, v) = send(&f.app, "POST", "/query", Some(body)).await;
        assert_eq!(s, StatusCode::BAD_REQUEST, "{body}: {v}");
        assert!(v["error"].is_string());
    }
    let (s, v) = send(
        &f.app,
        "POST",
        "/query",
        Some(r#"{"text": "hi", "combination": "bogus"}"#),
    )
    .await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert!(v["error"].as_str().unwrap().contains("svo_svoa_conv_msg"));
    let (s, _) = send(&f.app, "POST", "/indices/remove", Some(r#"{"ref": "x"}"#)).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn conversations_endpoint() {
    let f = fixture();
    let id = f.data.corpus[3].conv_id();
    let (s, v) = send(&f.app, "GET", &format!("/conversations/{id}"), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["conv_id"], id);
    assert_eq!(v["messages"].as_array().unwrap().len(), f.data.corpus[3].len());
    assert!(!v["quadruplets"].as_array().unwrap().is_empty());
    assert_eq!(v["instances"]["conversation"].as_array().unwrap().len(), 1);
    assert!(v["instances"]["svoa"][0]["quadruplet_ref"].is_string());
    assert!(v["instances"]["svoa"][0].get("vector").is_none());

    let (s, v) = send(&f.app, "GET", "/conversations/no-such-conv", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert!(v["error"].as_str().unwrap().contains("no-such-conv"));
}

#[tokio::test]
async fn remove_then_query_drops_the_best_match() {
    let f = fixture();
    let q = &f.data.queries[0];
    let body = json!({"text": q.text, "top_k": 40}).to_string();
    let (_, before) = send(&f.app, "POST", "/query", Some(&body)).await;
    let hit = &before["results"][0];
    let svoa = hit["components"]
        .as_array()
        .unwrap()
        .iter()
        .find(|c| c["kind"] == "svoa")
        .unwrap();
    let target = svoa["best_ref"].as_str().unwrap().to_owned();
    let conv_id = hit["conv_id"].as_str().unwrap().to_owned();

    let (s, v) = send(
        &f.app,
        "POST",
        "/indices/remove",
        Some(&json!({"quadruplet_ref": target}).to_string()),
    )
    .await;
    assert_eq!(s, StatusCode::OK, "{v}");
    assert_eq!(v["removed"], target.as_str());

    let (_, after) = send(&f.app, "POST", "/query", Some(&body)).await;
    for r in after["results"].as_array().unwrap() {
        for c in r["components"].as_array().unwrap() {
            assert_ne!(c["best_ref"].as_str(), Some(target.as_str()));
        }
    }

    // Brute force over the live index: nothing refers to the removed tuple.
    let snapshot = f.state.snapshot().await;
    let entry = snapshot.store.get(&conv_id).unwrap();
    for kind in ComponentKind::SEMANTIC {
        assert!(entry
            .instances(kind)
            .iter()
            .all(|i| i.quadruplet_ref.as_ref().map(|r| r.as_str()) != Some(target.as_str())));
    }
    assert!(entry.quadruplets.iter().all(|q| q.id.as_str() != target));

    // Persisted too.
    let reloaded = load(&f.path).unwrap();
    assert!(reloaded
        .get(&conv_id)
        .unwrap()
        .quadruplets
        .iter()
        .all(|q| q.id.as_str() != target));

    let (s, _) = send(
        &f.app,
        "POST",
        "/indices/remove",
        Some(&json!({"quadruplet_ref": target}).to_string()),
    )
    .await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn reloading_answers_503() {
    let f = fixture();
    f.state.set_reloading(true);
    let (s, v) = send(&f.app, "GET", "/healthz", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["status"], "reloading");
    for (method, uri, body) in [
        ("POST", "/query", Some(r#"{"text":"hi"}"#)),
        ("GET", "/stats", None),
        ("GET", "/conversations/conv-01", None),
        ("POST", "/indices/remove", Some(r#"{"quadruplet_ref":"conv-01#0.0"}"#)),
    ] {
        let (s, _) = send(&f.app, method, uri, body).await;
        assert_eq!(s, StatusCode::SERVICE_UNAVAILABLE, "{uri}");
    }
    f.state.set_reloading(false);
    let (s, _) = send(&f.app, "GET", "/stats", None).await;
    assert_eq!(s, StatusCode::OK);
}

#[tokio::test]
async fn reload_picks_up_a_new_file() {
    let f = fixture();
    let smaller = synthetic(5, 1, 99);
    persist(&build_store(&smaller, &f.embedder), &f.path).unwrap();
    let (s, v) = send(&f.app, "POST", "/reload", None).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    assert_eq!(v["conversations"], 5);
    let (_, v) = send(&f.app, "GET", "/stats", None).await;
    assert_eq!(v["conversations"], 5);

    std::fs::write(&f.path, "garbage\n").unwrap();
    let (s, _) = send(&f.app, "POST", "/reload", None).await;
    assert_eq!(s, StatusCode::INTERNAL_SERVER_ERROR);
    let (s, v) = send(&f.app, "GET", "/stats", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["conversations"], 5);
}

/// Hashed embeddings that take a while and record peak concurrency.
struct Slow {
    inner: HashedEmbedder,
    in_flight: AtomicUsize,
    peak: AtomicUsize,
}

impl EmbeddingBackend for Slow {
    fn model_id(&self) -> &str {
        self.inner.model_id()
    }

    fn dimension(&self) -> usize {
        self.inner.dimension()
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        self.peak.fetch_max(now, Ordering::SeqCst);
        std::thread::sleep(Duration::from_millis(30));
        self.in_flight.fetch_sub(1, Ordering::SeqCst);
        self.inner.embed_batch(texts)
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn query_embedding_concurrency_is_bounded() {
    let data = synthetic(10, 2, 5);
    let slow = Arc::new(Slow {
        inner: HashedEmbedder::new(DIM),
        in_flight: AtomicUsize::new(0),
        peak: AtomicUsize::new(0),
    });
    let embedder = Embedder::new(slow.clone(), Arc::new(EmbeddingCache::in_memory()), Default::default());
    let store = build_store(&data, &Embedder::hashed(DIM));
    let mut cfg = offline_config(None);
    cfg.server.max_concurrent_embeddings = 2;
    let state = Arc::new(AppState::new(LoadedIndex::new(store), embedder, cfg, None));
    let app = router(state);

    let mut tasks = Vec::new();
    for i in 0..12 {
        let app = app.clone();
        tasks.push(tokio::spawn(async move {
            let body = json!({"text": format!("distinct query number {i}")}).to_string();
            send(&app, "POST", "/query", Some(&body)).await.0
        }));
    }
    for t in tasks {
        assert_eq!(t.await.unwrap(), StatusCode::OK);
    }
    let peak = slow.peak.load(Ordering::SeqCst);
    assert!((1..=2).contains(&peak), "peak concurrency {peak}");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_queries_are_consistent() {
    let f = fixture();
    let q = &f.data.queries[1];
    let body = json!({"text": q.text, "top_k": 8}).to_string();
    let (_, reference) = send(&f.app, "POST", "/query", Some(&body)).await;
    let mut tasks = Vec::new();
    for _ in 0..16 {
        let app = f.app.clone();
        let body = body.clone();
        tasks.push(tokio::spawn(async move {
            send(&app, "POST", "/query", Some(&body)).await.1
        }));
    }
    for t in tasks {
        assert_eq!(t.await.unwrap(), reference);
    }
}
