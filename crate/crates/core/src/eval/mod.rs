//! Benchmark harness: data loading, metrics, end-to-end runs, weight search
//! and synthetic corpora.

mod data;
pub mod metrics;
mod synthetic;

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use data::{load_corpus, load_queries, write_corpus, write_queries, LoadError, QueryRecord};
pub use metrics::{Metric, QueryMetrics, CUTOFFS, TABLE_COLUMNS};
pub use synthetic::{generate_synthetic, SyntheticConfig, SyntheticData};

use crate::embedding::{EmbedError, Embedder};
use crate::index::SemanticIndexStore;
use crate::retrieval::{
    component_scores, ensemble_rank, total_from_scores, Bm25Index, Bm25Params, ScoringConfig, ScoringError, Searcher,
};
use crate::types::ComponentKind;
use crate::vector::EmbeddingVector;

/// Best published system on the full benchmark, printed next to local results
/// for orientation only; local backends are not expected to reach it.
pub const REFERENCE_ACC_AT_1: f64 = 0.4085;
pub const REFERENCE_NDCG_AT_20: f64 = 0.3198;
pub const REFERENCE_SYSTEM: &str = "GPT-3.5-turbo extraction + OpenAI text-embedding-3-large";

/// Deepest cutoff any metric looks at.
pub const RANK_DEPTH: usize = 20;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no queries to evaluate")]
    NoQueries,
    #[error("query {query_id} references conversation {conv_id}, which is not indexed")]
    UnknownConversation { query_id: String, conv_id: String },
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Scoring(#[from] ScoringError),
    #[error("{0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Free-form row label, usually the combination name.
    pub label: String,
    pub query_count: usize,
    /// Every metric at every cutoff, keyed like `ndcg@20`.
    pub metrics: BTreeMap<String, f64>,
    /// Mean wall-clock time of the scoring step per query, query embedding
    /// excluded.
    pub mean_scoring_seconds: f64,
}

impl MetricsReport {
    pub fn from_queries(label: impl Into<String>, per_query: &[QueryMetrics], mean_scoring_seconds: f64) -> Self {
        Self {
            label: label.into(),
            query_count: per_query.len(),
            metrics: QueryMetrics::mean(per_query).labelled().collect(),
            mean_scoring_seconds,
        }
    }

    pub fn get(&self, metric: Metric, k: usize) -> f64 {
        self.metrics
            .get(&metrics::metric_label(metric, k))
            .copied()
            .unwrap_or(0.0)
    }

    pub fn to_table(&self) -> String {
        render_table(std::slice::from_ref(self))
    }
}

/// Aligned plain-text table, one row per report, followed by timing and the
/// reference figures.
pub fn render_table(reports: &[MetricsReport]) -> String {
    let label_width = reports
        .iter()
        .map(|r| r.label.len())
        .chain(["combination".len()])
        .max()
        .unwrap_or(0);
    let mut out = String::new();
    let _ = write!(out, "{:<label_width$}", "combination");
    for (m, k) in TABLE_COLUMNS {
        let _ = write!(out, " {:>8}", metrics::metric_label(m, k));
    }
    out.push('\n');
    for r in reports {
        let _ = write!(out, "{:<label_width$}", r.label);
        for (m, k) in TABLE_COLUMNS {
            let _ = write!(out, " {:>8.4}", r.get(m, k));
        }
        out.push('\n');
    }
    out.push('\n');
    for r in reports {
        let _ = writeln!(
            out,
            "{}: {} queries, mean scoring time {:.3} ms/query",
            r.label,
            r.query_count,
            r.mean_scoring_seconds * 1e3
        );
    }
    let _ = writeln!(
        out,
        "reference ({REFERENCE_SYSTEM}, full benchmark): acc@1 {REFERENCE_ACC_AT_1:.4}, ndcg@20 {REFERENCE_NDCG_AT_20:.4}"
    );
    out
}

fn check_queries(store: &SemanticIndexStore, queries: &[QueryRecord]) -> Result<(), EvalError> {
    if queries.is_empty() {
        return Err(EvalError::NoQueries);
    }
    for q in queries {
        if let Some(missing) = q.relevant_conv_ids.iter().find(|id| !store.contains(id)) {
            return Err(EvalError::UnknownConversation {
                query_id: q.query_id.clone(),
                conv_id: missing.clone(),
            });
        }
    }
    Ok(())
}

/// Embeds every query once, then ranks and scores them one at a time. Only
/// the ranking call is timed.
pub fn run_benchmark(
    store: &SemanticIndexStore,
    embedder: &Embedder,
    queries: &[QueryRecord],
    cfg: &ScoringConfig,
    label: &str,
) -> Result<MetricsReport, EvalError> {
    check_queries(store, queries)?;
    let texts: Vec<&str> = queries.iter().map(|q| q.text.as_str()).collect();
    let vectors = embedder.embed(&texts)?;
    run_benchmark_embedded(store, queries, &vectors, cfg, label)
}

/// [`run_benchmark`] with query vectors supplied by the caller.
pub fn run_benchmark_embedded(
    store: &SemanticIndexStore,
    queries: &[QueryRecord],
    vectors: &[EmbeddingVector],
    cfg: &ScoringConfig,
    label: &str,
) -> Result<MetricsReport, EvalError> {
    check_queries(store, queries)?;
    let searcher = Searcher::new(store);
    let mut per_query = Vec::with_capacity(queries.len());
    let mut elapsed = 0.0;
    for (q, v) in queries.iter().zip(vectors) {
        let start = Instant::now();
        let ranked = searcher.rank(v, &q.text, cfg, RANK_DEPTH)?;
        elapsed += start.elapsed().as_secs_f64();
        let ids: Vec<&str> = ranked.iter().map(|b| b.conv_id.as_str()).collect();
        per_query.push(QueryMetrics::compute(&ids, &q.relevant_set()));
    }
    Ok(MetricsReport::from_queries(
        label,
        &per_query,
        elapsed / queries.len() as f64,
    ))
}

/// Benchmark over an ensemble: each store is paired with the embedder that
/// built it and totals are summed across them.
pub fn run_ensemble_benchmark(
    members: &[(&SemanticIndexStore, &Embedder)],
    queries: &[QueryRecord],
    cfg: &ScoringConfig,
    label: &str,
) -> Result<MetricsReport, EvalError> {
    let (first, _) = members.first().ok_or(ScoringError::EmptyEnsemble)?;
    check_queries(first, queries)?;
    let texts: Vec<&str> = queries.iter().map(|q| q.text.as_str()).collect();
    let per_member: Vec<Vec<EmbeddingVector>> =
        members.iter().map(|(_, e)| e.embed(&texts)).collect::<Result<_, _>>()?;
    let stores: Vec<&SemanticIndexStore> = members.iter().map(|(s, _)| *s).collect();
    let mut per_query = Vec::with_capacity(queries.len());
    let mut elapsed = 0.0;
    for (i, q) in queries.iter().enumerate() {
        let qv: Vec<EmbeddingVector> = per_member.iter().map(|v| v[i].clone()).collect();
        let start = Instant::now();
        let ranked = ensemble_rank(&qv, &stores, cfg, RANK_DEPTH)?;
        elapsed += start.elapsed().as_secs_f64();
        let ids: Vec<&str> = ranked.iter().map(|s| s.conv_id.as_str()).collect();
        per_query.push(QueryMetrics::compute(&ids, &q.relevant_set()));
    }
    Ok(MetricsReport::from_queries(
        label,
        &per_query,
        elapsed / queries.len() as f64,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WeightSearchConfig {
    /// Random candidates drawn in addition to the uniform vector.
    pub sample_count: usize,
    /// Inclusive lower and exclusive upper bound for every weight.
    pub weight_range: (f64, f64),
    /// Metric label such as `ndcg@20`.
    pub objective: String,
    pub seed: u64,
}

impl Default for WeightSearchConfig {
    fn default() -> Self {
        Self {
            sample_count: 1000,
            weight_range: (0.0, 2.0),
            objective: "ndcg@20".to_owned(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightSearchResult {
    pub weights: BTreeMap<ComponentKind, f64>,
    pub objective: f64,
    pub objective_metric: String,
    pub uniform_objective: f64,
    /// 0 means the uniform vector won.
    pub best_candidate: usize,
    pub candidates_evaluated: usize,
}

/// Per-query, per-conversation component scores computed once so many weight
/// vectors can be evaluated cheaply.
struct ScoreTable<'a> {
    conv_ids: Vec<&'a str>,
    /// `[query][conversation]`
    scores: Vec<Vec<[f64; 5]>>,
    bm25: Option<Vec<Vec<f64>>>,
    relevant: Vec<HashSet<&'a str>>,
}

impl<'a> ScoreTable<'a> {
    fn build(
        store: &'a SemanticIndexStore,
        queries: &'a [QueryRecord],
        vectors: &[EmbeddingVector],
        cfg: &ScoringConfig,
    ) -> Result<Self, EvalError> {
        for v in vectors {
            if v.dimension() != store.dimension() {
                return Err(ScoringError::DimensionMismatch {
                    expected: store.dimension(),
                    got: v.dimension(),
                }
                .into());
            }
        }
        let entries: Vec<_> = store.entries().collect();
        let scores = vectors
            .par_iter()
            .map(|q| entries.iter().map(|e| component_scores(q, e, cfg)).collect())
            .collect();
        let bm25 = (cfg.bm25_weight > 0.0).then(|| {
            let index = Bm25Index::from_store(store, Bm25Params::default());
            queries
                .iter()
                .map(|q| {
                    let s = index.normalized_scores(&q.text);
                    entries.iter().map(|e| s[e.conv_id()]).collect()
                })
                .collect()
        });
        Ok(Self {
            conv_ids: entries.iter().map(|e| e.conv_id()).collect(),
            scores,
            bm25,
            relevant: queries.iter().map(QueryRecord::relevant_set).collect(),
        })
    }

    /// Mean objective over all queries under `cfg`'s weights.
    fn objective(&self, cfg: &ScoringConfig, metric: Metric, k: usize) -> f64 {
        let depth = k.max(1);
        let sum: f64 = (0..self.scores.len())
            .map(|qi| {
                let mut totals: Vec<(f64, usize)> = self.scores[qi]
                    .iter()
                    .enumerate()
                    .map(|(ci, s)| {
                        let b = self.bm25.as_ref().map(|b| b[qi][ci]);
                        (total_from_scores(s, cfg, b), ci)
                    })
                    .collect();
                // conversations are in conv_id order, so the index breaks ties
                let order = |a: &(f64, usize), b: &(f64, usize)| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1));
                if depth < totals.len() {
                    totals.select_nth_unstable_by(depth - 1, order);
                    totals.truncate(depth);
                }
                totals.sort_by(order);
                let ids: Vec<&str> = totals.iter().map(|(_, ci)| self.conv_ids[*ci]).collect();
                metric.at(&ids, &self.relevant[qi], k)
            })
            .sum();
        sum / self.scores.len() as f64
    }
}

/// Random search over weights of the active components. Candidate 0 is the
/// all-ones vector; ties keep the earliest candidate.
pub fn optimize_weights(
    store: &SemanticIndexStore,
    embedder: &Embedder,
    queries: &[QueryRecord],
    cfg: &ScoringConfig,
    search: &WeightSearchConfig,
) -> Result<WeightSearchResult, EvalError> {
    check_queries(store, queries)?;
    let texts: Vec<&str> = queries.iter().map(|q| q.text.as_str()).collect();
    let vectors = embedder.embed(&texts)?;
    optimize_weights_embedded(store, queries, &vectors, cfg, search)
}

/// [`optimize_weights`] with query vectors supplied by the caller.
pub fn optimize_weights_embedded(
    store: &SemanticIndexStore,
    queries: &[QueryRecord],
    vectors: &[EmbeddingVector],
    cfg: &ScoringConfig,
    search: &WeightSearchConfig,
) -> Result<WeightSearchResult, EvalError> {
    check_queries(store, queries)?;
    cfg.validate()?;
    let (metric, k) = metrics::parse_metric_label(&search.objective).map_err(EvalError::Config)?;
    let (lo, hi) = search.weight_range;
    if !(lo.is_finite() && hi.is_finite() && 0.0 <= lo && lo < hi) {
        return Err(EvalError::Config(format!(
            "weight range must satisfy 0 <= low < high, got ({lo}, {hi})"
        )));
    }
    let table = ScoreTable::build(store, queries, vectors, cfg)?;
    let active: Vec<ComponentKind> = cfg.active_kinds().collect();

    let mut rng = ChaCha8Rng::seed_from_u64(search.seed);
    let mut candidates: Vec<Vec<f64>> = Vec::with_capacity(search.sample_count + 1);
    candidates.push(vec![1.0; active.len()]);
    for _ in 0..search.sample_count {
        candidates.push(active.iter().map(|_| rng.gen_range(lo..hi)).collect());
    }

    let weighted = |w: &[f64]| {
        let mut c = cfg.clone();
        for (kind, weight) in active.iter().zip(w) {
            c.set_weight(*kind, *weight);
        }
        c
    };
    let objectives: Vec<f64> = candidates
        .par_iter()
        .map(|w| table.objective(&weighted(w), metric, k))
        .collect();
    let mut best = 0;
    for (i, o) in objectives.iter().enumerate() {
        if *o > objectives[best] {
            best = i;
        }
    }
    Ok(WeightSearchResult {
        weights: active.iter().copied().zip(candidates[best].iter().copied()).collect(),
        objective: objectives[best],
        objective_metric: metrics::metric_label(metric, k),
        uniform_objective: objectives[0],
        best_candidate: best,
        candidates_evaluated: candidates.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extraction::mock::MockChatBackend;
    use crate::extraction::ExtractionConfig;
    use crate::index::Ingestor;

    fn planted() -> (SemanticIndexStore, Embedder, Vec<QueryRecord>) {
        let data = generate_synthetic(&SyntheticConfig {
            seed: 7,
            conversations: 40,
            queries: 12,
            utterances_per_conversation: 6.0,
            relevant_per_query: 3.0,
        });
        let embedder = Embedder::hashed(128);
        let chat = MockChatBackend::new();
        let ingestor = Ingestor::new(ExtractionConfig::default(), &chat, &embedder);
        let mut store = SemanticIndexStore::new(ingestor.manifest(0));
        for c in &data.corpus {
            store.insert(ingestor.ingest(c).unwrap()).unwrap();
        }
        (store, embedder, data.queries)
    }

    #[test]
    fn single_conversation_single_query_is_perfect() {
        let (store, embedder, _) = planted();
        let only = store.entries().next().unwrap().conversation.clone();
        let chat = MockChatBackend::new();
        let ingestor = Ingestor::new(ExtractionConfig::default(), &chat, &embedder);
        let mut one = SemanticIndexStore::new(ingestor.manifest(0));
        one.insert(ingestor.ingest(&only).unwrap()).unwrap();
        let q = QueryRecord {
            query_id: "q".into(),
            text: "anything".into(),
            relevant_conv_ids: vec![only.conv_id().to_owned()],
        };
        let r = run_benchmark(&one, &embedder, &[q], &ScoringConfig::default(), "full").unwrap();
        for (m, k) in TABLE_COLUMNS {
            let expected = if m == Metric::Precision { 1.0 / k as f64 } else { 1.0 };
            assert_eq!(r.get(m, k), expected, "{m}@{k}");
        }
        assert_eq!(r.get(Metric::Acc, 1), r.get(Metric::Precision, 1));
    }

    #[test]
    fn report_table_layout() {
        let (store, embedder, queries) = planted();
        let r = run_benchmark(
            &store,
            &embedder,
            &queries,
            &ScoringConfig::default(),
            "sv_svo_svoa_conv_msg",
        )
        .unwrap();
        assert_eq!(r.query_count, 12);
        assert_eq!(r.metrics.len(), 24);
        let table = r.to_table();
        let header: Vec<&str> = table.lines().next().unwrap().split_whitespace().collect();
        assert_eq!(header[0], "combination");
        assert_eq!(
            header[1..],
            [
                "acc@1", "acc@5", "p@5", "p@10", "r@5", "r@10", "ndcg@10", "ndcg@20", "mrr@10", "mrr@20", "map@10",
                "map@20"
            ]
        );
        assert!(table.contains("0.4085") && table.contains("0.3198"));
        let json = serde_json::to_string(&r).unwrap();
        assert_eq!(serde_json::from_str::<MetricsReport>(&json).unwrap(), r);
    }

    #[test]
    fn unknown_relevant_conversation_is_rejected() {
        let (store, embedder, _) = planted();
        let q = QueryRecord {
            query_id: "q".into(),
            text: "x".into(),
            relevant_conv_ids: vec!["nope".into()],
        };
        assert!(matches!(
            run_benchmark(&store, &embedder, &[q], &ScoringConfig::default(), "x"),
            Err(EvalError::UnknownConversation { .. })
        ));
    }

    #[test]
    fn weight_search_candidate_zero_and_determinism() {
        let (store, embedder, queries) = planted();
        let cfg = ScoringConfig::default();
        let none = WeightSearchConfig {
            sample_count: 0,
            ..WeightSearchConfig::default()
        };
        let r0 = optimize_weights(&store, &embedder, &queries, &cfg, &none).unwrap();
        assert_eq!(r0.best_candidate, 0);
        assert!(r0.weights.values().all(|w| *w == 1.0));
        let uniform = run_benchmark(&store, &embedder, &queries, &cfg, "u").unwrap();
        assert_eq!(r0.objective, uniform.get(Metric::Ndcg, 20));

        let search = WeightSearchConfig {
            sample_count: 50,
            seed: 3,
            ..WeightSearchConfig::default()
        };
        let a = optimize_weights(&store, &embedder, &queries, &cfg, &search).unwrap();
        let b = optimize_weights(&store, &embedder, &queries, &cfg, &search).unwrap();
        assert_eq!(a, b);
        assert!(a.objective >= a.uniform_objective);
        assert_eq!(a.candidates_evaluated, 51);
        let tuned = cfg.clone().with_weights(&a.weights);
        let check = run_benchmark(&store, &embedder, &queries, &tuned, "t").unwrap();
        assert_eq!(check.get(Metric::Ndcg, 20), a.objective);
    }

    #[test]
    fn bad_objective_is_a_config_error() {
        let (store, embedder, queries) = planted();
        let search = WeightSearchConfig {
            objective: "ndcg".into(),
            ..WeightSearchConfig::default()
        };
        assert!(matches!(
            optimize_weights(&store, &embedder, &queries, &ScoringConfig::default(), &search),
            Err(EvalError::Config(_))
        ));
    }

    #[test]
    fn ensemble_of_one_matches_single() {
        let (store, embedder, queries) = planted();
        let cfg = ScoringConfig::default();
        let single = run_benchmark(&store, &embedder, &queries, &cfg, "x").unwrap();
        let ens = run_ensemble_benchmark(&[(&store, &embedder), (&store, &embedder)], &queries, &cfg, "x").unwrap();
        assert_eq!(single.metrics, ens.metrics);
    }
}
