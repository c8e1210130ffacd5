//! Text embedding with batching, retries and a keyed cache.

mod cache;
mod hashed;

use std::collections::HashMap;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cache::{text_hash, CacheError, EmbeddingCache};
pub use hashed::{
    hash_tokens, hashed_embed, hashed_embed_seeded, token_feature, HashedEmbedder, DEFAULT_HASH_DIMENSION,
    DEFAULT_HASH_SEED,
};

use crate::vector::{l2_normalize, EmbeddingVector};

#[derive(Debug, Error)]
pub enum EmbedError {
    /// Raised by backends for a single failed call.
    #[error("embedding backend failure: {0}")]
    Transport(String),
    #[error("embedding failed after {attempts} attempts for batch indices {batch_indices:?}: {message}")]
    BatchFailed {
        batch_indices: Vec<usize>,
        attempts: u32,
        message: String,
    },
    #[error("backend returned {got} vectors for {expected} texts")]
    CountMismatch { expected: usize, got: usize },
    #[error("backend returned a {got}-dimensional vector, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Cache(#[from] CacheError),
}

/// A text-embedding model. Output order must match input order and every
/// vector must have [`EmbeddingBackend::dimension`] components.
pub trait EmbeddingBackend: Send + Sync {
    fn model_id(&self) -> &str;
    fn dimension(&self) -> usize;
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError>;
}

impl<T: EmbeddingBackend + ?Sized> EmbeddingBackend for Arc<T> {
    fn model_id(&self) -> &str {
        (**self).model_id()
    }

    fn dimension(&self) -> usize {
        (**self).dimension()
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        (**self).embed_batch(texts)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbedOptions {
    pub batch_size: usize,
    /// Prepended to every text before embedding (some models expect an
    /// instruction prefix). Part of the cache key.
    pub instruction_prefix: String,
    pub max_attempts: u32,
    /// Delay before the first retry; doubles on every further retry.
    #[serde(with = "millis")]
    pub initial_backoff: Duration,
}

mod millis {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        u64::deserialize(d).map(Duration::from_millis)
    }
}

impl Default for EmbedOptions {
    fn default() -> Self {
        Self {
            batch_size: 64,
            instruction_prefix: String::new(),
            max_attempts: 3,
            initial_backoff: Duration::from_millis(200),
        }
    }
}

fn call_with_retries(
    backend: &dyn EmbeddingBackend,
    texts: &[String],
    indices: &[usize],
    opts: &EmbedOptions,
) -> Result<Vec<EmbeddingVector>, EmbedError> {
    let attempts = opts.max_attempts.max(1);
    let mut delay = opts.initial_backoff;
    let mut last = String::new();
    for attempt in 1..=attempts {
        match backend.embed_batch(texts) {
            Ok(vectors) if vectors.len() == texts.len() => return Ok(vectors),
            Ok(vectors) => {
                return Err(EmbedError::CountMismatch {
                    expected: texts.len(),
                    got: vectors.len(),
                })
            }
            Err(e) => {
                last = e.to_string();
                tracing::warn!(attempt, error = %last, "embedding batch failed");
                if attempt < attempts {
                    std::thread::sleep(delay);
                    delay *= 2;
                }
            }
        }
    }
    Err(EmbedError::BatchFailed {
        batch_indices: indices.to_vec(),
        attempts,
        message: last,
    })
}

/// Embeds `texts` cache-first.
///
/// Misses are sent to the backend in batches of `opts.batch_size`; results are
/// L2-normalized before caching. Empty (or whitespace-only) texts map to the
/// zero vector without touching the backend. Output `i` corresponds to
/// `texts[i]`.
pub fn embed_texts<S: AsRef<str>>(
    texts: &[S],
    backend: &dyn EmbeddingBackend,
    cache: &EmbeddingCache,
    opts: &EmbedOptions,
) -> Result<Vec<EmbeddingVector>, EmbedError> {
    let model_id = backend.model_id();
    let dimension = backend.dimension();
    let mut out: Vec<Option<EmbeddingVector>> = vec![None; texts.len()];
    // effective text -> positions waiting on it
    let mut misses: Vec<(String, Vec<usize>)> = Vec::new();
    let mut miss_slot: HashMap<String, usize> = HashMap::new();

    for (i, text) in texts.iter().enumerate() {
        let text = text.as_ref();
        if text.trim().is_empty() {
            out[i] = Some(EmbeddingVector::zeros(dimension));
            continue;
        }
        let effective = format!("{}{}", opts.instruction_prefix, text);
        if let Some(v) = cache.get(model_id, &effective) {
            out[i] = Some(v);
        } else if let Some(&slot) = miss_slot.get(&effective) {
            misses[slot].1.push(i);
        } else {
            miss_slot.insert(effective.clone(), misses.len());
            misses.push((effective, vec![i]));
        }
    }

    for chunk in misses.chunks(opts.batch_size.max(1)) {
        let batch: Vec<String> = chunk.iter().map(|(t, _)| t.clone()).collect();
        let indices: Vec<usize> = chunk.iter().flat_map(|(_, idx)| idx.iter().copied()).collect();
        let vectors = call_with_retries(backend, &batch, &indices, opts)?;
        for ((text, positions), v) in chunk.iter().zip(vectors) {
            if v.dimension() != dimension {
                return Err(EmbedError::DimensionMismatch {
                    expected: dimension,
                    got: v.dimension(),
                });
            }
            let v = l2_normalize(&v);
            cache.insert(model_id, text, v.clone())?;
            for &p in positions {
                out[p] = Some(v.clone());
            }
        }
    }

    Ok(out.into_iter().map(|v| v.expect("every position filled")).collect())
}

/// A backend, its cache and the batching options bundled together.
#[derive(Clone)]
pub struct Embedder {
    backend: Arc<dyn EmbeddingBackend>,
    cache: Arc<EmbeddingCache>,
    options: EmbedOptions,
}

impl std::fmt::Debug for Embedder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Embedder")
            .field("model_id", &self.backend.model_id())
            .field("dimension", &self.backend.dimension())
            .field("options", &self.options)
            .finish()
    }
}

impl Embedder {
    pub fn new(backend: Arc<dyn EmbeddingBackend>, cache: Arc<EmbeddingCache>, options: EmbedOptions) -> Self {
        Self {
            backend,
            cache,
            options,
        }
    }

    /// Hashed embeddings with an in-memory cache.
    pub fn hashed(dimension: usize) -> Self {
        Self::new(
            Arc::new(HashedEmbedder::new(dimension)),
            Arc::new(EmbeddingCache::in_memory()),
            EmbedOptions::default(),
        )
    }

    pub fn model_id(&self) -> &str {
        self.backend.model_id()
    }

    pub fn dimension(&self) -> usize {
        self.backend.dimension()
    }

    pub fn cache(&self) -> &EmbeddingCache {
        &self.cache
    }

    pub fn embed<S: AsRef<str>>(&self, texts: &[S]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        embed_texts(texts, self.backend.as_ref(), &self.cache, &self.options)
    }

    pub fn embed_one(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        Ok(self.embed(&[text])?.remove(0))
    }
}

#[cfg(test)]
mod tests {
    use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};

    use super::*;

    /// Hashed backend that counts calls and can be switched off.
    struct Probe {
        inner: HashedEmbedder,
        calls: AtomicUsize,
        texts_seen: AtomicUsize,
        disabled: AtomicBool,
        failures_left: AtomicUsize,
    }

    impl Probe {
        fn new() -> Self {
            Self {
                inner: HashedEmbedder::new(32),
                calls: AtomicUsize::new(0),
                texts_seen: AtomicUsize::new(0),
                disabled: AtomicBool::new(false),
                failures_left: AtomicUsize::new(0),
            }
        }
    }

    impl EmbeddingBackend for Probe {
        fn model_id(&self) -> &str {
            self.inner.model_id()
        }
        fn dimension(&self) -> usize {
            32
        }
        fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            if self.disabled.load(Ordering::SeqCst) {
                return Err(EmbedError::Transport("backend disabled".into()));
            }
            if self
                .failures_left
                .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| n.checked_sub(1))
                .is_ok()
            {
                return Err(EmbedError::Transport("flaky".into()));
            }
            self.texts_seen.fetch_add(texts.len(), Ordering::SeqCst);
            // deliberately unnormalized to check normalization happens here
            Ok(self
                .inner
                .embed_batch(texts)?
                .into_iter()
                .map(|v| v.scaled(3.0))
                .collect())
        }
    }

    fn fast() -> EmbedOptions {
        EmbedOptions {
            initial_backoff: Duration::from_millis(1),
            ..Default::default()
        }
    }

    #[test]
    fn duplicate_texts_share_one_backend_slot() {
        let probe = Probe::new();
        let cache = EmbeddingCache::in_memory();
        let out = embed_texts(&["hello", "hello"], &probe, &cache, &fast()).unwrap();
        assert!(out[0].bit_eq(&out[1]));
        assert_eq!(probe.texts_seen.load(Ordering::SeqCst), 1);
        assert!(out[0].is_normalized());
    }

    #[test]
    fn empty_text_is_zero_without_backend_call() {
        let probe = Probe::new();
        let out = embed_texts(&[""], &probe, &EmbeddingCache::in_memory(), &fast()).unwrap();
        assert_eq!(out[0].dimension(), 32);
        assert!(out[0].is_zero());
        assert_eq!(probe.calls.load(Ordering::SeqCst), 0);
    }

    #[test]
    fn warm_cache_survives_backend_outage() {
        let probe = Probe::new();
        let cache = EmbeddingCache::in_memory();
        let first = embed_texts(&["what is the weather"], &probe, &cache, &fast()).unwrap();
        probe.disabled.store(true, Ordering::SeqCst);
        let calls = probe.calls.load(Ordering::SeqCst);
        let second = embed_texts(&["what is the weather"], &probe, &cache, &fast()).unwrap();
        assert!(first[0].bit_eq(&second[0]));
        assert_eq!(probe.calls.load(Ordering::SeqCst), calls);
    }

    #[test]
    fn order_is_preserved_across_batches() {
        let probe = Probe::new();
        let texts: Vec<String> = (0..150).map(|i| format!("text number {i}")).collect();
        let opts = EmbedOptions {
            batch_size: 64,
            ..fast()
        };
        let out = embed_texts(&texts, &probe, &EmbeddingCache::in_memory(), &opts).unwrap();
        assert_eq!(probe.calls.load(Ordering::SeqCst), 3);
        for (t, v) in texts.iter().zip(&out) {
            assert!(v.bit_eq(&hashed_embed(t, 32)));
        }
    }

    #[test]
    fn transient_failures_are_retried() {
        let probe = Probe::new();
        probe.failures_left.store(2, Ordering::SeqCst);
        let out = embed_texts(&["x"], &probe, &EmbeddingCache::in_memory(), &fast()).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(probe.calls.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn persistent_failure_reports_batch_indices() {
        let probe = Probe::new();
        probe.disabled.store(true, Ordering::SeqCst);
        let err = embed_texts(&["", "a", "b", "a"], &probe, &EmbeddingCache::in_memory(), &fast()).unwrap_err();
        match err {
            EmbedError::BatchFailed {
                batch_indices,
                attempts,
                ..
            } => {
                assert_eq!(batch_indices, vec![1, 3, 2]);
                assert_eq!(attempts, 3);
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn cache_is_keyed_by_model_and_prefix() {
        let cache = EmbeddingCache::in_memory();
        let a = HashedEmbedder::with_seed(32, 1);
        let b = HashedEmbedder::with_seed(32, 2);
        let va = embed_texts(&["same text"], &a, &cache, &fast()).unwrap();
        let vb = embed_texts(&["same text"], &b, &cache, &fast()).unwrap();
        assert!(!va[0].bit_eq(&vb[0]));
        let prefixed = EmbedOptions {
            instruction_prefix: "query: ".into(),
            ..fast()
        };
        embed_texts(&["same text"], &a, &cache, &prefixed).unwrap();
        assert_eq!(cache.len(), 3);
        assert!(cache.get(a.model_id(), "query: same text").is_some());
    }
}
