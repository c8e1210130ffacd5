//! Binary-relevance ranking metrics at a cutoff `k`.
//!
//! Ranks are 1-based. All functions return 0.0 for an empty relevant set.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

pub const CUTOFFS: [usize; 4] = [1, 5, 10, 20];

/// Columns of the text report, in order.
pub const TABLE_COLUMNS: [(Metric, usize); 12] = [
    (Metric::Acc, 1),
    (Metric::Acc, 5),
    (Metric::Precision, 5),
    (Metric::Precision, 10),
    (Metric::Recall, 5),
    (Metric::Recall, 10),
    (Metric::Ndcg, 10),
    (Metric::Ndcg, 20),
    (Metric::Mrr, 10),
    (Metric::Mrr, 20),
    (Metric::Map, 10),
    (Metric::Map, 20),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Metric {
    #[serde(rename = "acc")]
    Acc,
    #[serde(rename = "p")]
    Precision,
    #[serde(rename = "r")]
    Recall,
    #[serde(rename = "ndcg")]
    Ndcg,
    #[serde(rename = "mrr")]
    Mrr,
    #[serde(rename = "map")]
    Map,
}

impl Metric {
    pub const ALL: [Metric; 6] = [
        Metric::Acc,
        Metric::Precision,
        Metric::Recall,
        Metric::Ndcg,
        Metric::Mrr,
        Metric::Map,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Acc => "acc",
            Metric::Precision => "p",
            Metric::Recall => "r",
            Metric::Ndcg => "ndcg",
            Metric::Mrr => "mrr",
            Metric::Map => "map",
        }
    }

    pub fn at(self, ranked: &[&str], relevant: &HashSet<&str>, k: usize) -> f64 {
        match self {
            Metric::Acc => acc_at_k(ranked, relevant, k),
            Metric::Precision => p_at_k(ranked, relevant, k),
            Metric::Recall => r_at_k(ranked, relevant, k),
            Metric::Ndcg => ndcg_at_k(ranked, relevant, k),
            Metric::Mrr => mrr_at_k(ranked, relevant, k),
            Metric::Map => map_at_k(ranked, relevant, k),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Parses labels such as `ndcg@20`.
pub fn parse_metric_label(label: &str) -> Result<(Metric, usize), String> {
    let err = || format!("invalid metric {label:?} (expected e.g. ndcg@20)");
    let (name, k) = label.split_once('@').ok_or_else(err)?;
    let metric = Metric::ALL.into_iter().find(|m| m.as_str() == name).ok_or_else(err)?;
    let k: usize = k.parse().map_err(|_| err())?;
    if k == 0 {
        return Err(err());
    }
    Ok((metric, k))
}

pub fn metric_label(metric: Metric, k: usize) -> String {
    format!("{metric}@{k}")
}

fn hits(ranked: &[&str], relevant: &HashSet<&str>, k: usize) -> usize {
    ranked.iter().take(k).filter(|id| relevant.contains(*id)).count()
}

pub fn acc_at_k(ranked: &[&str], relevant: &HashSet<&str>, k: usize) -> f64 {
    if hits(ranked, relevant, k) > 0 {
        1.0
    } else {
        0.0
    }
}

pub fn p_at_k(ranked: &[&str], relevant: &HashSet<&str>, k: usize) -> f64 {
    if relevant.is_empty() {
        return 0.0;
    }
    hits(ranked, relevant, k) as f64 / k as f64
}

pub fn r_at_k(ranked: &[&str], relevant: &HashSet<&str>, k: usize) -> f64 {
    if relevant.is_empty() {
        return 0.0;
    }
    hits(ranked, relevant, k) as f64 / relevant.len() as f64
}

pub fn ndcg_at_k(ranked: &[&str], relevant: &HashSet<&str>, k: usize) -> f64 {
    let ideal_hits = relevant.len().min(k);
    if ideal_hits == 0 {
        return 0.0;
    }
    let discount = |rank: usize| 1.0 / ((rank + 1) as f64).log2();
    let dcg: f64 = ranked
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, id)| relevant.contains(*id))
        .map(|(i, _)| discount(i + 1))
        .sum();
    let idcg: f64 = (1..=ideal_hits).map(discount).sum();
    dcg / idcg
}

pub fn mrr_at_k(ranked: &[&str], relevant: &HashSet<&str>, k: usize) -> f64 {
    ranked
        .iter()
        .take(k)
        .position(|id| relevant.contains(id))
        .map_or(0.0, |i| 1.0 / (i + 1) as f64)
}

pub fn map_at_k(ranked: &[&str], relevant: &HashSet<&str>, k: usize) -> f64 {
    let denom = relevant.len().min(k);
    if denom == 0 {
        return 0.0;
    }
    let mut found = 0usize;
    let mut sum = 0.0;
    for (i, id) in ranked.iter().take(k).enumerate() {
        if relevant.contains(id) {
            found += 1;
            sum += found as f64 / (i + 1) as f64;
        }
    }
    sum / denom as f64
}

/// Every metric at every cutoff for one query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QueryMetrics {
    values: [[f64; 4]; 6],
}

impl QueryMetrics {
    pub fn compute(ranked: &[&str], relevant: &HashSet<&str>) -> Self {
        let mut values = [[0.0; 4]; 6];
        for (mi, m) in Metric::ALL.into_iter().enumerate() {
            for (ki, k) in CUTOFFS.into_iter().enumerate() {
                values[mi][ki] = m.at(ranked, relevant, k);
            }
        }
        Self { values }
    }

    pub fn get(&self, metric: Metric, k: usize) -> Option<f64> {
        let ki = CUTOFFS.iter().position(|c| *c == k)?;
        let mi = Metric::ALL.iter().position(|m| *m == metric)?;
        Some(self.values[mi][ki])
    }

    /// Element-wise mean; zeros for an empty slice.
    pub fn mean(items: &[QueryMetrics]) -> Self {
        let mut values = [[0.0; 4]; 6];
        if items.is_empty() {
            return Self { values };
        }
        for q in items {
            for (row, qrow) in values.iter_mut().zip(&q.values) {
                for (v, x) in row.iter_mut().zip(qrow) {
                    *v += x;
                }
            }
        }
        for row in &mut values {
            for v in row {
                *v /= items.len() as f64;
            }
        }
        Self { values }
    }

    /// `(label, value)` for all 24 metric/cutoff pairs.
    pub fn labelled(&self) -> impl Iterator<Item = (String, f64)> + '_ {
        Metric::ALL.into_iter().enumerate().flat_map(move |(mi, m)| {
            CUTOFFS
                .into_iter()
                .enumerate()
                .map(move |(ki, k)| (metric_label(m, k), self.values[mi][ki]))
        })
    }
}
