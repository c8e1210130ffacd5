//! Subcommand implementations. Each returns a value the caller prints, so the
//! same code drives the binary and the integration tests.

use std::collections::HashSet;
use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{anyhow, bail, Context};
use serde::{Deserialize, Serialize};
use svoa_core::analysis::{cluster_components, ClusterReport};
use svoa_core::embedding::{EmbedError, Embedder, EmbeddingBackend, EmbeddingCache};
use svoa_core::eval::{
    generate_synthetic, load_corpus, load_queries, optimize_weights, run_benchmark, write_corpus, write_queries,
    MetricsReport, SyntheticConfig, WeightSearchConfig, WeightSearchResult,
};
use svoa_core::index::{
    ingest_conversation, load, load_lenient, persist, IndexEntry, IndexWriter, KindCounts, Manifest, SemanticIndexStore,
};
use svoa_core::{ComponentKind, EmbeddingVector};

use crate::backends;
use crate::config::AppConfig;
use crate::query::{check_model, run_query, LoadedIndex, QueryRequest, QueryResponse};

/// Forwards to another backend and counts the calls that reach it.
pub struct CountingBackend {
    inner: Arc<dyn EmbeddingBackend>,
    calls: AtomicUsize,
}

impl CountingBackend {
    pub fn new(inner: Arc<dyn EmbeddingBackend>) -> Self {
        Self {
            inner,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }
}

impl EmbeddingBackend for CountingBackend {
    fn model_id(&self) -> &str {
        self.inner.model_id()
    }

    fn dimension(&self) -> usize {
        self.inner.dimension()
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.inner.embed_batch(texts)
    }
}

pub fn partial_path(out: &Path) -> PathBuf {
    suffixed(out, ".partial")
}

pub fn progress_path(out: &Path) -> PathBuf {
    suffixed(out, ".progress")
}

fn suffixed(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// `SOURCE_DATE_EPOCH` when set, otherwise the current time.
pub fn creation_time() -> u64 {
    std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|v| v.trim().parse().ok())
        .unwrap_or_else(|| {
            SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0)
        })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub out: PathBuf,
    pub conversations: usize,
    pub ingested: usize,
    /// Conversations carried over from an interrupted run.
    pub resumed: usize,
    pub mean_seconds_per_conversation: f64,
    pub quadruplets: usize,
    pub instances: KindCounts,
    pub warnings: usize,
    pub embedding_backend_calls: usize,
}

impl fmt::Display for IngestSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "index written to {}", self.out.display())?;
        writeln!(
            f,
            "conversations: {} ({} ingested, {} resumed)",
            self.conversations, self.ingested, self.resumed
        )?;
        writeln!(
            f,
            "mean wall-clock per conversation: {:.3} s",
            self.mean_seconds_per_conversation
        )?;
        writeln!(f, "quadruplets: {}", self.quadruplets)?;
        let i = &self.instances;
        writeln!(
            f,
            "instances: conversation {} message {} sv {} svo {} svoa {} (total {})",
            i.conversation,
            i.message,
            i.sv,
            i.svo,
            i.svoa,
            i.total()
        )?;
        writeln!(f, "extraction warnings: {}", self.warnings)?;
        write!(f, "embedding backend calls: {}", self.embedding_backend_calls)
    }
}

fn read_progress(path: &Path) -> anyhow::Result<HashSet<String>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut ids = HashSet::new();
    for line in BufReader::new(file).lines() {
        let line = line?;
        let id = line.trim();
        if !id.is_empty() {
            ids.insert(id.to_owned());
        }
    }
    Ok(ids)
}

/// Entries finished by an earlier interrupted run with the same settings.
fn resume_state(
    out: &Path,
    fresh: &Manifest,
    corpus_ids: &HashSet<&str>,
) -> anyhow::Result<Option<(Manifest, Vec<IndexEntry>)>> {
    let (partial, progress) = (partial_path(out), progress_path(out));
    if !progress.exists() || !partial.exists() {
        return Ok(None);
    }
    let done = read_progress(&progress)?;
    let loaded = load_lenient(&partial).with_context(|| format!("reading {}", partial.display()))?;
    if let Some(e) = &loaded.discarded {
        tracing::warn!(error = %e, "discarding the unfinished tail of the partial index");
    }
    let m = loaded.store.manifest();
    if m.model_id != fresh.model_id || m.dimension != fresh.dimension || m.extraction_mode != fresh.extraction_mode {
        bail!(
            "{} was built with {} (dimension {}, {}); current settings are {} (dimension {}, {}). \
             Delete it and {} to start over",
            partial.display(),
            m.model_id,
            m.dimension,
            m.extraction_mode,
            fresh.model_id,
            fresh.dimension,
            fresh.extraction_mode,
            progress.display()
        );
    }
    let entries: Vec<IndexEntry> = loaded
        .store
        .entries()
        .filter(|e| done.contains(e.conv_id()) && corpus_ids.contains(e.conv_id()))
        .cloned()
        .collect();
    Ok(Some((m.clone(), entries)))
}

/// Ingests a corpus into an index file.
///
/// Every finished conversation is appended to `<out>.partial` and its id to
/// `<out>.progress`. On failure both files stay behind and a rerun with the
/// same settings skips the listed conversations. On success the index is
/// written atomically to `out` and both files are removed.
pub fn ingest(cfg: &AppConfig, corpus_path: &Path, out: &Path) -> anyhow::Result<IngestSummary> {
    let corpus = load_corpus(corpus_path)?;
    let chat = backends::chat_backend(cfg)?;
    let counting = Arc::new(CountingBackend::new(backends::embedding_backend(cfg)?));
    let cache = match &cfg.paths.cache {
        Some(path) => EmbeddingCache::open(path)?,
        None => EmbeddingCache::in_memory(),
    };
    let embedder = Embedder::new(counting.clone(), Arc::new(cache), cfg.embedding.embed_options());
    let ecfg = cfg.extraction_config();

    let fresh = Manifest::new(embedder.model_id(), embedder.dimension(), ecfg.mode, creation_time());
    let corpus_ids: HashSet<&str> = corpus.iter().map(|c| c.conv_id()).collect();
    let (manifest, mut entries) = resume_state(out, &fresh, &corpus_ids)?.unwrap_or((fresh, Vec::new()));
    let resumed = entries.len();
    if resumed > 0 {
        tracing::info!(resumed, "resuming interrupted ingestion");
    }

    let (partial, progress) = (partial_path(out), progress_path(out));
    let mut writer = IndexWriter::create(&partial, &manifest)?;
    let mut ledger = OpenOptions::new()
        .create(true)
        .write(true)
        .truncate(true)
        .open(&progress)
        .with_context(|| format!("creating {}", progress.display()))?;
    for e in &entries {
        writer.append(e)?;
        writeln!(ledger, "{}", e.conv_id())?;
    }
    ledger.flush()?;

    let done: HashSet<String> = entries.iter().map(|e| e.conv_id().to_owned()).collect();
    let todo: Vec<_> = corpus.iter().filter(|c| !done.contains(c.conv_id())).collect();
    let mut elapsed = 0.0;
    for (n, conv) in todo.iter().enumerate() {
        let start = Instant::now();
        let entry = ingest_conversation(conv, &ecfg, chat.as_ref(), &embedder).map_err(|e| {
            anyhow!(e).context(format!(
                "ingestion stopped at conversation {} ({} of {} done); progress kept in {}",
                conv.conv_id(),
                resumed + n,
                corpus.len(),
                progress.display()
            ))
        })?;
        elapsed += start.elapsed().as_secs_f64();
        writer.append(&entry)?;
        writeln!(ledger, "{}", entry.conv_id())?;
        ledger.flush()?;
        tracing::debug!(conv_id = entry.conv_id(), "ingested");
        entries.push(entry);
    }
    writer.finish()?;
    drop(ledger);

    let mut store = SemanticIndexStore::new(manifest);
    for e in entries {
        store.insert(e)?;
    }
    persist(&store, out)?;
    fs::remove_file(&partial).ok();
    fs::remove_file(&progress).ok();

    let stats = store.stats();
    let ingested = todo.len();
    Ok(IngestSummary {
        out: out.to_path_buf(),
        conversations: stats.conversations,
        ingested,
        resumed,
        mean_seconds_per_conversation: if ingested == 0 { 0.0 } else { elapsed / ingested as f64 },
        quadruplets: stats.quadruplets,
        instances: stats.instances,
        warnings: stats.warnings,
        embedding_backend_calls: counting.calls(),
    })
}

pub fn query(cfg: &AppConfig, index_path: &Path, req: &QueryRequest) -> anyhow::Result<QueryResponse> {
    let embedder = backends::embedder(cfg)?;
    let index = LoadedIndex::open(index_path, &embedder)?;
    Ok(run_query(&index, &embedder, req, cfg)?)
}

fn open_for_eval(cfg: &AppConfig, index_path: &Path) -> anyhow::Result<(SemanticIndexStore, Embedder)> {
    let embedder = backends::embedder(cfg)?;
    let store = load(index_path)?;
    check_model(&store, &embedder)?;
    Ok((store, embedder))
}

pub fn eval(
    cfg: &AppConfig,
    index_path: &Path,
    queries_path: &Path,
    combination: Option<&str>,
    bm25_weight: Option<f64>,
) -> anyhow::Result<MetricsReport> {
    let (store, embedder) = open_for_eval(cfg, index_path)?;
    let known: HashSet<&str> = store.conv_ids().collect();
    let queries = load_queries(queries_path, Some(&known))?;
    let scoring = cfg.scoring_config(combination, bm25_weight)?;
    let label = combination.unwrap_or(&cfg.scoring.combination);
    Ok(run_benchmark(&store, &embedder, &queries, &scoring, label)?)
}

pub fn optimize(
    cfg: &AppConfig,
    index_path: &Path,
    queries_path: &Path,
    combination: Option<&str>,
    search: &WeightSearchConfig,
) -> anyhow::Result<WeightSearchResult> {
    let (store, embedder) = open_for_eval(cfg, index_path)?;
    let known: HashSet<&str> = store.conv_ids().collect();
    let queries = load_queries(queries_path, Some(&known))?;
    let scoring = cfg.scoring_config(combination, None)?;
    Ok(optimize_weights(&store, &embedder, &queries, &scoring, search)?)
}

pub fn render_weights(result: &WeightSearchResult) -> String {
    use std::fmt::Write;
    let mut out = String::new();
    for (kind, w) in &result.weights {
        let _ = writeln!(out, "{:<12} {:.6}", kind.as_str(), w);
    }
    let _ = writeln!(
        out,
        "{} {:.6} (uniform weights {:.6}), best candidate {} of {}",
        result.objective_metric,
        result.objective,
        result.uniform_objective,
        result.best_candidate,
        result.candidates_evaluated
    );
    out
}

pub fn cluster(index_path: &Path, kind: ComponentKind, k: usize, seed: u64) -> anyhow::Result<ClusterReport> {
    let store = load(index_path)?;
    Ok(cluster_components(&store, kind, k, seed)?)
}

/// Writes `corpus.jsonl` and `queries.jsonl` into `dir`.
pub fn synth(dir: &Path, cfg: &SyntheticConfig) -> anyhow::Result<(PathBuf, PathBuf)> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let data = generate_synthetic(cfg);
    let corpus = dir.join("corpus.jsonl");
    let queries = dir.join("queries.jsonl");
    write_corpus(&corpus, &data.corpus)?;
    write_queries(&queries, &data.queries)?;
    Ok((corpus, queries))
}
