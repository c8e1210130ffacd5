//! Query scoring: per-kind aggregated cosine similarity, weighted and summed
//! with the conversation-level similarity, optionally mixed with BM25.

mod bm25;

use std::borrow::Cow;
use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use bm25::{bm25_scores, tokenize, Bm25Index, Bm25Params};

use crate::index::{IndexEntry, SemanticIndexStore};
use crate::types::{ComponentKind, QuadrupletRef};
use crate::vector::{cosine_unchecked, EmbeddingVector};

use ComponentKind::{Conversation, Message, SV, SVO, SVOA};

/// The named component combinations.
pub const COMBINATIONS: [(&str, &[ComponentKind]); 6] = [
    ("sv", &[SV]),
    ("sv_svo", &[SV, SVO]),
    ("sv_svo_svoa", &[SV, SVO, SVOA]),
    ("svoa_conv_msg", &[Conversation, Message, SVOA]),
    ("svo_svoa_conv_msg", &[Conversation, Message, SVO, SVOA]),
    ("sv_svo_svoa_conv_msg", &[Conversation, Message, SV, SVO, SVOA]),
];

pub const FULL_COMBINATION: &str = "sv_svo_svoa_conv_msg";

pub fn combination_names() -> impl Iterator<Item = &'static str> {
    COMBINATIONS.iter().map(|(n, _)| *n)
}

/// Resolves a combination name to its component set.
pub fn combination(name: &str) -> Result<&'static [ComponentKind], ScoringError> {
    COMBINATIONS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, kinds)| *kinds)
        .ok_or_else(|| ScoringError::UnknownCombination(name.to_owned()))
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScoringError {
    #[error("unknown combination {0:?}; valid combinations: sv, sv_svo, sv_svo_svoa, svoa_conv_msg, svo_svoa_conv_msg, sv_svo_svoa_conv_msg")]
    UnknownCombination(String),
    #[error("query vector has dimension {got}, index dimension is {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("at least one component must be active")]
    NoActiveComponents,
    #[error("weight for {kind} must be finite and non-negative, got {value}")]
    InvalidWeight { kind: ComponentKind, value: f64 },
    #[error("bm25 weight must be finite and non-negative, got {0}")]
    InvalidBm25Weight(f64),
    #[error("bm25 weight is {0} but no query text was supplied")]
    MissingQueryText(f64),
    #[error("top_k must be at least 1")]
    ZeroTopK,
    #[error("ensemble needs at least one backend")]
    EmptyEnsemble,
    #[error("ensemble needs one query vector per store ({stores} stores, {queries} queries)")]
    EnsembleArity { stores: usize, queries: usize },
    #[error("store {store} covers different conversations: missing {missing:?}, extra {extra:?}")]
    EnsembleMismatch {
        store: usize,
        missing: Vec<String>,
        extra: Vec<String>,
    },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    #[default]
    Max,
    Sum,
    Avg,
}

impl std::str::FromStr for Aggregation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "max" => Ok(Aggregation::Max),
            "sum" => Ok(Aggregation::Sum),
            "avg" => Ok(Aggregation::Avg),
            other => Err(format!("unknown aggregation {other:?} (expected max, sum or avg)")),
        }
    }
}

/// Which components count and how much.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoringConfig {
    active: [bool; 5],
    weights: [f64; 5],
    pub aggregation: Aggregation,
    pub bm25_weight: f64,
    /// Score of a component kind with no instances in a conversation.
    pub missing_component_score: f64,
}

impl Default for ScoringConfig {
    /// The full combination, unit weights, max aggregation, no BM25.
    fn default() -> Self {
        Self::from_kinds(&ComponentKind::ALL)
    }
}

impl ScoringConfig {
    pub fn from_kinds(kinds: &[ComponentKind]) -> Self {
        let mut active = [false; 5];
        for k in kinds {
            active[k.ordinal()] = true;
        }
        Self {
            active,
            weights: [1.0; 5],
            aggregation: Aggregation::Max,
            bm25_weight: 0.0,
            missing_component_score: 0.0,
        }
    }

    pub fn from_combination(name: &str) -> Result<Self, ScoringError> {
        combination(name).map(Self::from_kinds)
    }

    pub fn is_active(&self, kind: ComponentKind) -> bool {
        self.active[kind.ordinal()]
    }

    pub fn active_kinds(&self) -> impl Iterator<Item = ComponentKind> + '_ {
        ComponentKind::ALL.into_iter().filter(|k| self.is_active(*k))
    }

    pub fn weight(&self, kind: ComponentKind) -> f64 {
        self.weights[kind.ordinal()]
    }

    pub fn set_weight(&mut self, kind: ComponentKind, weight: f64) -> &mut Self {
        self.weights[kind.ordinal()] = weight;
        self
    }

    /// Overrides the weights named in `weights`; others keep their value.
    pub fn with_weights(mut self, weights: &BTreeMap<ComponentKind, f64>) -> Self {
        for (k, w) in weights {
            self.set_weight(*k, *w);
        }
        self
    }

    pub fn with_bm25_weight(mut self, weight: f64) -> Self {
        self.bm25_weight = weight;
        self
    }

    pub fn with_aggregation(mut self, aggregation: Aggregation) -> Self {
        self.aggregation = aggregation;
        self
    }

    /// Weights of the active components.
    pub fn weight_map(&self) -> BTreeMap<ComponentKind, f64> {
        self.active_kinds().map(|k| (k, self.weight(k))).collect()
    }

    pub fn validate(&self) -> Result<(), ScoringError> {
        if !self.active.iter().any(|a| *a) {
            return Err(ScoringError::NoActiveComponents);
        }
        for kind in ComponentKind::ALL {
            let value = self.weight(kind);
            if !value.is_finite() || value < 0.0 {
                return Err(ScoringError::InvalidWeight { kind, value });
            }
        }
        if !self.bm25_weight.is_finite() || self.bm25_weight < 0.0 {
            return Err(ScoringError::InvalidBm25Weight(self.bm25_weight));
        }
        Ok(())
    }
}

/// Score of one component kind for one conversation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentScore {
    pub kind: ComponentKind,
    pub score: f64,
    /// Text of the best-matching instance (`None` when the kind is empty).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub best_text: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub best_ref: Option<QuadrupletRef>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreBreakdown {
    pub conv_id: String,
    /// Active components in canonical order.
    pub components: Vec<ComponentScore>,
    /// Normalized BM25 score, when the hybrid term is on.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bm25: Option<f64>,
    pub total: f64,
}

impl ScoreBreakdown {
    pub fn score(&self, kind: ComponentKind) -> Option<f64> {
        self.components.iter().find(|c| c.kind == kind).map(|c| c.score)
    }

    pub fn component(&self, kind: ComponentKind) -> Option<&ComponentScore> {
        self.components.iter().find(|c| c.kind == kind)
    }
}

/// Raw per-kind scores with the index of the winning instance.
#[derive(Debug, Clone, Copy)]
struct KindScores {
    scores: [f64; 5],
    best: [Option<usize>; 5],
}

fn aggregate(
    query: &EmbeddingVector,
    entry: &IndexEntry,
    kind: ComponentKind,
    cfg: &ScoringConfig,
) -> (f64, Option<usize>) {
    let instances = entry.instances(kind);
    if instances.is_empty() {
        return (cfg.missing_component_score, None);
    }
    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    let mut sum = 0.0;
    for (i, inst) in instances.iter().enumerate() {
        let s = cosine_unchecked(query, &inst.embedding);
        if s > best_score {
            best_score = s;
            best = i;
        }
        sum += s;
    }
    let score = match cfg.aggregation {
        Aggregation::Max => best_score,
        Aggregation::Sum => sum,
        Aggregation::Avg => sum / instances.len() as f64,
    };
    (score, Some(best))
}

fn kind_scores(query: &EmbeddingVector, entry: &IndexEntry, cfg: &ScoringConfig) -> KindScores {
    let mut out = KindScores {
        scores: [0.0; 5],
        best: [None; 5],
    };
    for kind in cfg.active_kinds() {
        let (s, b) = aggregate(query, entry, kind, cfg);
        out.scores[kind.ordinal()] = s;
        out.best[kind.ordinal()] = b;
    }
    out
}

/// Per-kind scores indexed by [`ComponentKind::ordinal`]; inactive kinds are 0.
/// The query dimension must already match the entry.
pub fn component_scores(query: &EmbeddingVector, entry: &IndexEntry, cfg: &ScoringConfig) -> [f64; 5] {
    kind_scores(query, entry, cfg).scores
}

/// Total for precomputed per-kind scores, summed in the same order as the
/// ranking path so results are bit-identical.
pub fn total_from_scores(scores: &[f64; 5], cfg: &ScoringConfig, bm25: Option<f64>) -> f64 {
    let mut total = 0.0;
    for kind in cfg.active_kinds() {
        total += cfg.weight(kind) * scores[kind.ordinal()];
    }
    if let Some(b) = bm25 {
        total += cfg.bm25_weight * b;
    }
    total
}

fn weighted_total(ks: &KindScores, cfg: &ScoringConfig, bm25: Option<f64>) -> f64 {
    total_from_scores(&ks.scores, cfg, bm25)
}

fn breakdown(
    entry: &IndexEntry,
    ks: &KindScores,
    cfg: &ScoringConfig,
    bm25: Option<f64>,
    total: f64,
) -> ScoreBreakdown {
    let components = cfg
        .active_kinds()
        .map(|kind| {
            let best = ks.best[kind.ordinal()].map(|i| &entry.instances(kind)[i]);
            ComponentScore {
                kind,
                score: ks.scores[kind.ordinal()],
                best_text: best.map(|i| i.text.clone()),
                best_ref: best.and_then(|i| i.quadruplet_ref.clone()),
            }
        })
        .collect();
    ScoreBreakdown {
        conv_id: entry.conv_id().to_owned(),
        components,
        bm25,
        total,
    }
}

fn check_query(query: &EmbeddingVector, dimension: usize) -> Result<(), ScoringError> {
    if query.dimension() != dimension {
        return Err(ScoringError::DimensionMismatch {
            expected: dimension,
            got: query.dimension(),
        });
    }
    Ok(())
}

/// Scores one conversation. `bm25` is the normalized BM25 score of the
/// conversation and is only used when `cfg.bm25_weight > 0`.
pub fn score_conversation(
    query: &EmbeddingVector,
    entry: &IndexEntry,
    cfg: &ScoringConfig,
    bm25: Option<f64>,
) -> Result<ScoreBreakdown, ScoringError> {
    cfg.validate()?;
    check_query(query, entry.conversation_instance.embedding.dimension())?;
    let bm25 = hybrid_term(cfg, bm25)?;
    let ks = kind_scores(query, entry, cfg);
    let total = weighted_total(&ks, cfg, bm25);
    Ok(breakdown(entry, &ks, cfg, bm25, total))
}

fn hybrid_term(cfg: &ScoringConfig, bm25: Option<f64>) -> Result<Option<f64>, ScoringError> {
    if cfg.bm25_weight > 0.0 {
        bm25.map(Some).ok_or(ScoringError::MissingQueryText(cfg.bm25_weight))
    } else {
        Ok(None)
    }
}

/// Descending total, then ascending `conv_id`.
pub fn rank_order(a_total: f64, a_id: &str, b_total: f64, b_id: &str) -> Ordering {
    b_total.total_cmp(&a_total).then_with(|| a_id.cmp(b_id))
}

fn rank_inner(
    query: &EmbeddingVector,
    store: &SemanticIndexStore,
    cfg: &ScoringConfig,
    bm25: Option<&HashMap<String, f64>>,
    top_k: usize,
) -> Result<Vec<ScoreBreakdown>, ScoringError> {
    cfg.validate()?;
    if top_k == 0 {
        return Err(ScoringError::ZeroTopK);
    }
    if store.is_empty() {
        return Ok(Vec::new());
    }
    check_query(query, store.dimension())?;
    if cfg.bm25_weight > 0.0 && bm25.is_none() {
        return Err(ScoringError::MissingQueryText(cfg.bm25_weight));
    }
    let entries: Vec<&IndexEntry> = store.entries().collect();
    let mut scored: Vec<(usize, KindScores, Option<f64>, f64)> = entries
        .par_iter()
        .enumerate()
        .map(|(i, entry)| {
            let ks = kind_scores(query, entry, cfg);
            let b = if cfg.bm25_weight > 0.0 {
                Some(bm25.and_then(|m| m.get(entry.conv_id()).copied()).unwrap_or(0.0))
            } else {
                None
            };
            (i, ks, b, weighted_total(&ks, cfg, b))
        })
        .collect();
    let by_rank = |a: &(usize, KindScores, Option<f64>, f64), b: &(usize, KindScores, Option<f64>, f64)| {
        rank_order(a.3, entries[a.0].conv_id(), b.3, entries[b.0].conv_id())
    };
    if top_k < scored.len() {
        scored.select_nth_unstable_by(top_k - 1, by_rank);
        scored.truncate(top_k);
    }
    scored.sort_by(by_rank);
    Ok(scored
        .iter()
        .map(|(i, ks, b, total)| breakdown(entries[*i], ks, cfg, *b, *total))
        .collect())
}

/// Ranks the store against a query embedding (semantic scoring only;
/// `cfg.bm25_weight` must be 0, use [`Searcher`] for the hybrid score).
pub fn rank_conversations(
    query: &EmbeddingVector,
    store: &SemanticIndexStore,
    cfg: &ScoringConfig,
    top_k: usize,
) -> Result<Vec<ScoreBreakdown>, ScoringError> {
    rank_inner(query, store, cfg, None, top_k)
}

/// A store plus its BM25 statistics.
#[derive(Debug, Clone)]
pub struct Searcher<'a> {
    store: &'a SemanticIndexStore,
    bm25: Cow<'a, Bm25Index>,
}

impl<'a> Searcher<'a> {
    pub fn new(store: &'a SemanticIndexStore) -> Self {
        Self {
            bm25: Cow::Owned(Bm25Index::from_store(store, Bm25Params::default())),
            store,
        }
    }

    pub fn with_bm25(store: &'a SemanticIndexStore, bm25: Bm25Index) -> Self {
        Self {
            store,
            bm25: Cow::Owned(bm25),
        }
    }

    /// Borrows BM25 statistics kept alongside the store.
    pub fn with_bm25_ref(store: &'a SemanticIndexStore, bm25: &'a Bm25Index) -> Self {
        Self {
            store,
            bm25: Cow::Borrowed(bm25),
        }
    }

    pub fn store(&self) -> &SemanticIndexStore {
        self.store
    }

    pub fn bm25(&self) -> &Bm25Index {
        self.bm25.as_ref()
    }

    /// Ranks with the hybrid term when `cfg.bm25_weight > 0`. With a zero
    /// weight BM25 is not evaluated at all.
    pub fn rank(
        &self,
        query: &EmbeddingVector,
        query_text: &str,
        cfg: &ScoringConfig,
        top_k: usize,
    ) -> Result<Vec<ScoreBreakdown>, ScoringError> {
        if cfg.bm25_weight > 0.0 {
            let scores = self.bm25.normalized_scores(query_text);
            rank_inner(query, self.store, cfg, Some(&scores), top_k)
        } else {
            rank_inner(query, self.store, cfg, None, top_k)
        }
    }
}

/// Per-conversation total summed over several embedding backends.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleScore {
    pub conv_id: String,
    /// One total per backend, in input order.
    pub per_backend: Vec<f64>,
    pub total: f64,
}

fn conv_id_set(store: &SemanticIndexStore) -> BTreeSet<&str> {
    store.conv_ids().collect()
}

/// Sums totals across backends. Stores must cover the same conversations;
/// `queries[i]` is the query embedded by the backend of `stores[i]`.
/// Results come in `conv_id` order.
pub fn ensemble_score(
    queries: &[EmbeddingVector],
    stores: &[&SemanticIndexStore],
    cfg: &ScoringConfig,
) -> Result<Vec<EnsembleScore>, ScoringError> {
    cfg.validate()?;
    if cfg.bm25_weight > 0.0 {
        return Err(ScoringError::MissingQueryText(cfg.bm25_weight));
    }
    let first = stores.first().ok_or(ScoringError::EmptyEnsemble)?;
    if queries.len() != stores.len() {
        return Err(ScoringError::EnsembleArity {
            stores: stores.len(),
            queries: queries.len(),
        });
    }
    let ids = conv_id_set(first);
    for (n, store) in stores.iter().enumerate().skip(1) {
        let other = conv_id_set(store);
        if other != ids {
            return Err(ScoringError::EnsembleMismatch {
                store: n,
                missing: ids.difference(&other).map(|s| s.to_string()).collect(),
                extra: other.difference(&ids).map(|s| s.to_string()).collect(),
            });
        }
    }
    for (q, s) in queries.iter().zip(stores) {
        check_query(q, s.dimension())?;
    }
    // BTreeMap iteration gives every store the same conv_id order.
    let per_store: Vec<Vec<f64>> = queries
        .iter()
        .zip(stores)
        .map(|(q, s)| {
            let entries: Vec<&IndexEntry> = s.entries().collect();
            entries
                .par_iter()
                .map(|e| weighted_total(&kind_scores(q, e, cfg), cfg, None))
                .collect()
        })
        .collect();
    Ok(ids
        .iter()
        .enumerate()
        .map(|(i, id)| {
            let per_backend: Vec<f64> = per_store.iter().map(|totals| totals[i]).collect();
            EnsembleScore {
                conv_id: (*id).to_owned(),
                total: per_backend.iter().sum(),
                per_backend,
            }
        })
        .collect())
}

/// [`ensemble_score`] sorted by rank and cut to `top_k`.
pub fn ensemble_rank(
    queries: &[EmbeddingVector],
    stores: &[&SemanticIndexStore],
    cfg: &ScoringConfig,
    top_k: usize,
) -> Result<Vec<EnsembleScore>, ScoringError> {
    if top_k == 0 {
        return Err(ScoringError::ZeroTopK);
    }
    let mut scores = ensemble_score(queries, stores, cfg)?;
    scores.sort_by(|a, b| rank_order(a.total, &a.conv_id, b.total, &b.conv_id));
    scores.truncate(top_k);
    Ok(scores)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extraction::ExtractionMode;
    use crate::index::{IndexEntry, Manifest};
    use crate::types::{ComponentInstance, ConversationRecord, Turn};

    fn inst(kind: ComponentKind, v: &[f64], n: usize) -> ComponentInstance {
        ComponentInstance {
            kind,
            text: format!("{kind} {n}"),
            embedding: EmbeddingVector::new(v.to_vec()),
            source_message_index: (kind != Conversation).then_some(0),
            quadruplet_ref: kind.is_semantic().then(|| QuadrupletRef::new("x", 0, n)),
        }
    }

    /// Builds an entry straight from vectors; quadruplet refs are left dangling
    /// because scoring never resolves them.
    fn raw_entry(
        id: &str,
        conv: &[f64],
        msgs: &[&[f64]],
        sv: &[&[f64]],
        svo: &[&[f64]],
        svoa: &[&[f64]],
    ) -> IndexEntry {
        let list = |k, vs: &[&[f64]]| vs.iter().enumerate().map(|(n, v)| inst(k, v, n)).collect();
        IndexEntry {
            conversation: ConversationRecord::from_turns(id, [Turn::new("user", "x")]).unwrap(),
            conversation_instance: inst(Conversation, conv, 0),
            messages: list(Message, msgs),
            sv: list(SV, sv),
            svo: list(SVO, svo),
            svoa: list(SVOA, svoa),
            quadruplets: Vec::new(),
            warnings: Vec::new(),
        }
    }

    /// Bypasses `insert` validation for the same reason as [`raw_entry`].
    fn raw_store(entries: Vec<IndexEntry>) -> SemanticIndexStore {
        let dim = entries[0].conversation_instance.embedding.dimension();
        let mut s = SemanticIndexStore::new(Manifest::new("t", dim, ExtractionMode::TwoStep, 0));
        for e in entries {
            s.insert_unchecked(e);
        }
        s
    }

    fn example() -> IndexEntry {
        raw_entry(
            "first",
            &[1.0, 0.0],
            &[&[0.0, 1.0], &[1.0, 0.0]],
            &[&[0.6, 0.8]],
            &[],
            &[&[1.0, 0.0]],
        )
    }

    #[test]
    fn worked_example_totals_three_point_six() {
        let q = EmbeddingVector::new(vec![1.0, 0.0]);
        let b = score_conversation(&q, &example(), &ScoringConfig::default(), None).unwrap();
        assert!((b.total - 3.6).abs() < 1e-12);
        assert_eq!(b.score(SVO), Some(0.0));
        assert!((b.score(SV).unwrap() - 0.6).abs() < 1e-12);
        assert_eq!(b.component(Message).unwrap().best_text.as_deref(), Some("message 1"));
        assert_eq!(b.component(SVO).unwrap().best_text, None);
    }

    #[test]
    fn explicit_unit_weights_match_default() {
        let q = EmbeddingVector::new(vec![0.3, 0.7]);
        let mut cfg = ScoringConfig::default();
        for k in ComponentKind::ALL {
            cfg.set_weight(k, 1.0);
        }
        let a = score_conversation(&q, &example(), &ScoringConfig::default(), None).unwrap();
        let b = score_conversation(&q, &example(), &cfg, None).unwrap();
        assert_eq!(a.total.to_bits(), b.total.to_bits());
    }

    #[test]
    fn conversation_only_total_is_conversation_score() {
        let q = EmbeddingVector::new(vec![0.3, 0.7]);
        let cfg = ScoringConfig::from_kinds(&[Conversation]);
        let b = score_conversation(&q, &example(), &cfg, None).unwrap();
        assert_eq!(b.components.len(), 1);
        assert_eq!(b.total, b.score(Conversation).unwrap());
    }

    #[test]
    fn sum_and_avg_aggregations() {
        let q = EmbeddingVector::new(vec![1.0, 0.0]);
        let cfg = ScoringConfig::from_kinds(&[Message]).with_aggregation(Aggregation::Sum);
        assert!((score_conversation(&q, &example(), &cfg, None).unwrap().total - 1.0).abs() < 1e-12);
        let cfg = cfg.with_aggregation(Aggregation::Avg);
        assert!((score_conversation(&q, &example(), &cfg, None).unwrap().total - 0.5).abs() < 1e-12);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let q = EmbeddingVector::new(vec![1.0, 0.0, 0.0]);
        assert_eq!(
            score_conversation(&q, &example(), &ScoringConfig::default(), None),
            Err(ScoringError::DimensionMismatch { expected: 2, got: 3 })
        );
    }

    #[test]
    fn ranking_order_clamp_and_ties() {
        let second = raw_entry("second", &[0.0, 1.0], &[&[0.6, 0.8]], &[&[0.6, 0.8]], &[], &[]);
        let mut twin = example();
        twin.conversation = ConversationRecord::from_turns("a-twin", [Turn::new("user", "x")]).unwrap();
        let s = raw_store(vec![example(), second, twin]);
        let q = EmbeddingVector::new(vec![1.0, 0.0]);
        let ranked = rank_conversations(&q, &s, &ScoringConfig::default(), 10).unwrap();
        let ids: Vec<_> = ranked.iter().map(|b| b.conv_id.as_str()).collect();
        assert_eq!(ids, vec!["a-twin", "first", "second"]);
        assert!((ranked[2].total - 1.2).abs() < 1e-12);
        assert_eq!(
            rank_conversations(&q, &s, &ScoringConfig::default(), 1).unwrap().len(),
            1
        );
    }

    #[test]
    fn empty_store_ranks_empty() {
        let s = SemanticIndexStore::new(Manifest::new("t", 2, ExtractionMode::TwoStep, 0));
        let q = EmbeddingVector::new(vec![1.0, 0.0]);
        assert!(rank_conversations(&q, &s, &ScoringConfig::default(), 3)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn combinations_resolve() {
        assert_eq!(combination("sv").unwrap(), &[SV]);
        assert_eq!(combination("svoa_conv_msg").unwrap(), &[Conversation, Message, SVOA]);
        let err = combination("bogus").unwrap_err().to_string();
        for name in combination_names() {
            assert!(err.contains(name), "{err}");
        }
        assert_eq!(combination_names().count(), 6);
    }

    #[test]
    fn invalid_configs_rejected() {
        let q = EmbeddingVector::new(vec![1.0, 0.0]);
        assert_eq!(
            score_conversation(&q, &example(), &ScoringConfig::from_kinds(&[]), None),
            Err(ScoringError::NoActiveComponents)
        );
        let mut cfg = ScoringConfig::default();
        cfg.set_weight(SV, -1.0);
        assert!(matches!(
            score_conversation(&q, &example(), &cfg, None),
            Err(ScoringError::InvalidWeight { .. })
        ));
        let cfg = ScoringConfig::default().with_bm25_weight(0.5);
        assert_eq!(
            score_conversation(&q, &example(), &cfg, None),
            Err(ScoringError::MissingQueryText(0.5))
        );
    }

    #[test]
    fn ensemble_additivity_and_mismatch() {
        let q = EmbeddingVector::new(vec![1.0, 0.0]);
        let a = raw_store(vec![example()]);
        let single = ensemble_score(std::slice::from_ref(&q), &[&a], &ScoringConfig::default()).unwrap();
        assert!((single[0].total - 3.6).abs() < 1e-12);

        let cfg = ScoringConfig::from_kinds(&[Conversation]);
        let half = raw_store(vec![raw_entry(
            "first",
            &[0.5, 0.866_025_403_784_438_6],
            &[],
            &[],
            &[],
            &[],
        )]);
        let both = ensemble_score(&[q.clone(), q.clone()], &[&a, &half], &cfg).unwrap();
        assert!((both[0].total - 1.5).abs() < 1e-12);

        let other = raw_store(vec![raw_entry("zzz", &[1.0, 0.0], &[], &[], &[], &[])]);
        match ensemble_score(&[q.clone(), q], &[&a, &other], &cfg) {
            Err(ScoringError::EnsembleMismatch { missing, extra, .. }) => {
                assert_eq!(missing, vec!["first"]);
                assert_eq!(extra, vec!["zzz"]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
