//! Okapi BM25 over conversation renderings.
//!
//! IDF is `ln(1 + (N - n + 0.5) / (n + 0.5))`, which stays positive even for
//! terms present in most documents. Query terms are counted once each.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::index::SemanticIndexStore;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 1.2, b: 0.75 }
    }
}

/// Lowercased alphanumeric runs.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

#[derive(Debug, Clone)]
struct Doc {
    id: String,
    len: f64,
    tf: HashMap<String, u32>,
}

#[derive(Debug, Clone)]
pub struct Bm25Index {
    params: Bm25Params,
    docs: Vec<Doc>,
    df: HashMap<String, u32>,
    avgdl: f64,
}

impl Bm25Index {
    pub fn from_documents<I, S, T>(docs: I, params: Bm25Params) -> Self
    where
        I: IntoIterator<Item = (S, T)>,
        S: Into<String>,
        T: AsRef<str>,
    {
        let mut df: HashMap<String, u32> = HashMap::new();
        let docs: Vec<Doc> = docs
            .into_iter()
            .map(|(id, text)| {
                let tokens = tokenize(text.as_ref());
                let mut tf: HashMap<String, u32> = HashMap::new();
                for t in &tokens {
                    *tf.entry(t.clone()).or_default() += 1;
                }
                for t in tf.keys() {
                    *df.entry(t.clone()).or_default() += 1;
                }
                Doc {
                    id: id.into(),
                    len: tokens.len() as f64,
                    tf,
                }
            })
            .collect();
        let avgdl = if docs.is_empty() {
            0.0
        } else {
            docs.iter().map(|d| d.len).sum::<f64>() / docs.len() as f64
        };
        Self {
            params,
            docs,
            df,
            avgdl,
        }
    }

    /// One document per conversation: its rendered conversation text.
    pub fn from_store(store: &SemanticIndexStore, params: Bm25Params) -> Self {
        Self::from_documents(
            store
                .entries()
                .map(|e| (e.conv_id().to_owned(), e.conversation_instance.text.as_str())),
            params,
        )
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn idf(&self, term: &str) -> f64 {
        let n = self.docs.len() as f64;
        let df = f64::from(self.df.get(term).copied().unwrap_or(0));
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln().max(0.0)
    }

    /// Unnormalized scores in document order.
    pub fn raw_scores(&self, query: &str) -> Vec<(&str, f64)> {
        let mut seen = HashSet::new();
        let terms: Vec<(String, f64)> = tokenize(query)
            .into_iter()
            .filter(|t| seen.insert(t.clone()))
            .filter(|t| self.df.contains_key(t))
            .map(|t| {
                let idf = self.idf(&t);
                (t, idf)
            })
            .collect();
        let Bm25Params { k1, b } = self.params;
        self.docs
            .iter()
            .map(|d| {
                let norm = if self.avgdl > 0.0 { d.len / self.avgdl } else { 0.0 };
                let score = terms
                    .iter()
                    .map(|(t, idf)| {
                        let tf = f64::from(d.tf.get(t).copied().unwrap_or(0));
                        idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * norm))
                    })
                    .sum();
                (d.id.as_str(), score)
            })
            .collect()
    }

    /// Scores divided by the query's maximum score, so the best document gets
    /// 1.0. All zeros when nothing matches.
    pub fn normalized_scores(&self, query: &str) -> HashMap<String, f64> {
        let raw = self.raw_scores(query);
        let max = raw.iter().map(|(_, s)| *s).fold(0.0, f64::max);
        raw.into_iter()
            .map(|(id, s)| (id.to_owned(), if max > 0.0 { s / max } else { 0.0 }))
            .collect()
    }
}

/// Normalized BM25 score of every conversation in the store.
pub fn bm25_scores(query: &str, store: &SemanticIndexStore, params: Bm25Params) -> HashMap<String, f64> {
    Bm25Index::from_store(store, params).normalized_scores(query)
}
