//! The single query path shared by the CLI and the HTTP service.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use svoa_core::embedding::{EmbedError, Embedder};
use svoa_core::index::{load, IndexError, SemanticIndexStore};
use svoa_core::retrieval::{Bm25Index, Bm25Params, ScoreBreakdown, ScoringConfig, ScoringError, Searcher};
use svoa_core::EmbeddingVector;
use thiserror::Error;

use crate::config::{parse_weights, AppConfig};

/// A store with its BM25 statistics, ready to serve queries.
#[derive(Debug, Clone)]
pub struct LoadedIndex {
    pub store: SemanticIndexStore,
    pub bm25: Bm25Index,
}

impl LoadedIndex {
    pub fn new(store: SemanticIndexStore) -> Self {
        let bm25 = Bm25Index::from_store(&store, Bm25Params::default());
        Self { store, bm25 }
    }

    /// Loads an index file and checks it was built with `embedder`'s model.
    pub fn open(path: impl AsRef<Path>, embedder: &Embedder) -> Result<Self, IndexError> {
        let store = load(path)?;
        check_model(&store, embedder)?;
        Ok(Self::new(store))
    }

    pub fn searcher(&self) -> Searcher<'_> {
        Searcher::with_bm25_ref(&self.store, &self.bm25)
    }
}

/// Query vectors are only comparable with index vectors from the same model.
pub fn check_model(store: &SemanticIndexStore, embedder: &Embedder) -> Result<(), IndexError> {
    let m = store.manifest();
    if m.model_id != embedder.model_id() || m.dimension != embedder.dimension() {
        return Err(IndexError::ModelMismatch {
            expected: format!("{} (dimension {})", m.model_id, m.dimension),
            found: format!("{} (dimension {})", embedder.model_id(), embedder.dimension()),
        });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueryRequest {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top_k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub combination: Option<String>,
    /// Overrides the configured weight of each listed kind.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<BTreeMap<String, f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bm25_weight: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResponse {
    pub combination: String,
    pub top_k: usize,
    pub results: Vec<ScoreBreakdown>,
}

#[derive(Debug, Error)]
pub enum QueryError {
    #[error("{0}")]
    BadRequest(String),
    #[error(transparent)]
    Embedding(#[from] EmbedError),
    #[error(transparent)]
    Scoring(#[from] ScoringError),
}

/// A validated request, ready to run once the query is embedded.
#[derive(Debug, Clone)]
pub struct PreparedQuery {
    pub text: String,
    pub combination: String,
    pub top_k: usize,
    pub scoring: ScoringConfig,
}

impl PreparedQuery {
    pub fn new(req: &QueryRequest, cfg: &AppConfig) -> Result<Self, QueryError> {
        if req.text.trim().is_empty() {
            return Err(QueryError::BadRequest("query text is empty".into()));
        }
        let top_k = req.top_k.unwrap_or(cfg.scoring.top_k);
        if top_k == 0 {
            return Err(QueryError::BadRequest("top_k must be positive".into()));
        }
        let combination = req
            .combination
            .clone()
            .unwrap_or_else(|| cfg.scoring.combination.clone());
        let bad = |e: anyhow::Error| QueryError::BadRequest(format!("{e:#}"));
        let mut scoring = cfg.scoring_config(Some(&combination), req.bm25_weight).map_err(bad)?;
        if let Some(weights) = &req.weights {
            scoring = scoring.with_weights(&parse_weights(weights).map_err(bad)?);
            scoring.validate().map_err(|e| QueryError::BadRequest(e.to_string()))?;
        }
        Ok(Self {
            text: req.text.clone(),
            combination,
            top_k,
            scoring,
        })
    }

    pub fn execute(&self, index: &LoadedIndex, vector: &EmbeddingVector) -> Result<QueryResponse, QueryError> {
        let results = index.searcher().rank(vector, &self.text, &self.scoring, self.top_k)?;
        Ok(QueryResponse {
            combination: self.combination.clone(),
            top_k: self.top_k,
            results,
        })
    }
}

pub fn run_query(
    index: &LoadedIndex,
    embedder: &Embedder,
    req: &QueryRequest,
    cfg: &AppConfig,
) -> Result<QueryResponse, QueryError> {
    let prepared = PreparedQuery::new(req, cfg)?;
    let vector = embedder.embed_one(&prepared.text)?;
    prepared.execute(index, &vector)
}

/// Newlines folded and long text cut to `max` characters.
fn one_line(text: &str, max: usize) -> String {
    let folded = text.replace('\n', " / ");
    if folded.chars().count() <= max {
        return folded;
    }
    let mut cut: String = folded.chars().take(max).collect();
    cut.push_str("...");
    cut
}

/// Human-readable ranking with per-component scores and best matches.
pub fn render_response(resp: &QueryResponse) -> String {
    use std::fmt::Write;
    let mut out = String::new();
    for (rank, hit) in resp.results.iter().enumerate() {
        let _ = writeln!(out, "{:>3}. {}  total {:.6}", rank + 1, hit.conv_id, hit.total);
        for c in &hit.components {
            let _ = write!(out, "       {:<12} {:>9.6}", c.kind.as_str(), c.score);
            if let Some(text) = &c.best_text {
                let _ = write!(out, "  {}", one_line(text, 100));
            }
            out.push('\n');
        }
        if let Some(b) = hit.bm25 {
            let _ = writeln!(out, "       {:<12} {:>9.6}", "bm25", b);
        }
    }
    if resp.results.is_empty() {
        out.push_str("no results\n");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_line_folds_and_cuts() {
        assert_eq!(one_line("a\nb", 10), "a / b");
        assert_eq!(one_line("abcdef", 3), "abc...");
    }

    #[test]
    fn prepare_rejects_bad_requests() {
        let cfg = AppConfig::offline(16);
        let req = |text: &str| QueryRequest {
            text: text.into(),
            ..QueryRequest::default()
        };
        assert!(matches!(
            PreparedQuery::new(&req("  "), &cfg),
            Err(QueryError::BadRequest(_))
        ));
        let mut r = req("hello");
        r.combination = Some("bogus".into());
        let err = PreparedQuery::new(&r, &cfg).unwrap_err().to_string();
        assert!(err.contains("sv_svo_svoa_conv_msg"), "{err}");
        let mut r = req("hello");
        r.top_k = Some(0);
        assert!(PreparedQuery::new(&r, &cfg).is_err());
        let mut r = req("hello");
        r.weights = Some([("svoa".to_owned(), -2.0)].into());
        assert!(PreparedQuery::new(&r, &cfg).is_err());
        let mut r = req("hello");
        r.weights = Some([("svoa".to_owned(), 2.0)].into());
        let p = PreparedQuery::new(&r, &cfg).unwrap();
        assert_eq!(p.scoring.weight(svoa_core::ComponentKind::SVOA), 2.0);
        assert_eq!(p.top_k, cfg.scoring.top_k);
    }
}
