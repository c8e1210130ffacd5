//! Intent and topic clustering of semantic-index embeddings.
//!
//! Lloyd's k-means with k-means++ seeding on unit-normalized vectors, where
//! squared Euclidean distance is `2 - 2cos`. Assignment ties go to the lower
//! centroid index, a point only moves when another centroid is strictly
//! closer, and an emptied cluster keeps its previous centroid.

use std::collections::HashSet;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::index::SemanticIndexStore;
use crate::types::{ComponentKind, QuadrupletRef};
use crate::vector::{l2_normalize, EmbeddingVector};

pub const DEFAULT_CLUSTER_COUNT: usize = 15;
pub const DEFAULT_REPRESENTATIVES: usize = 5;
pub const MAX_ITERATIONS: usize = 100;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("clustering works on sv, svo or svoa instances, not {0}")]
    UnsupportedKind(ComponentKind),
    #[error("k must be at least 1")]
    ZeroK,
    #[error("need at least {k} distinct vectors to form {k} clusters, found {distinct}")]
    TooFewPoints { k: usize, distinct: usize },
    #[error("points have mixed dimensions ({0} and {1})")]
    MixedDimensions(usize, usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    pub centroids: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    /// Within-cluster sum of squares after every assignment step.
    pub wcss_history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centroids: &[Vec<f64>], current: Option<usize>) -> (usize, f64) {
    let mut best = current.unwrap_or(0);
    let mut best_d = sq_dist(point, &centroids[best]);
    for (j, c) in centroids.iter().enumerate() {
        let d = sq_dist(point, c);
        if d < best_d || (d == best_d && current.is_none() && j < best) {
            best = j;
            best_d = d;
        }
    }
    (best, best_d)
}

fn distinct_count(points: &[Vec<f64>]) -> usize {
    let set: HashSet<Vec<u64>> = points.iter().map(|p| p.iter().map(|x| x.to_bits()).collect()).collect();
    set.len()
}

fn plus_plus_init(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut centroids = vec![points[rng.gen_range(0..points.len())].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let mut target = rng.gen::<f64>() * total;
        // fall back to the farthest point if rounding walks past the end
        let mut chosen = d2
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
            .map(|(i, _)| i)
            .expect("non-empty");
        for (i, d) in d2.iter().enumerate() {
            if *d > 0.0 {
                if target < *d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
        }
        let c = points[chosen].clone();
        for (p, d) in points.iter().zip(d2.iter_mut()) {
            *d = d.min(sq_dist(p, &c));
        }
        centroids.push(c);
    }
    centroids
}

/// Clusters `points` (used as given; normalize beforehand for cosine
/// geometry). Deterministic for a fixed seed.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64, max_iterations: usize) -> Result<KMeans, AnalysisError> {
    if k == 0 {
        return Err(AnalysisError::ZeroK);
    }
    if let Some(first) = points.first() {
        if let Some(p) = points.iter().find(|p| p.len() != first.len()) {
            return Err(AnalysisError::MixedDimensions(first.len(), p.len()));
        }
    }
    let distinct = distinct_count(points);
    if distinct < k {
        return Err(AnalysisError::TooFewPoints { k, distinct });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = plus_plus_init(points, k, &mut rng);
    let dim = points[0].len();
    let mut assignments: Vec<Option<usize>> = vec![None; points.len()];
    let mut wcss_history = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    while iterations < max_iterations.max(1) {
        iterations += 1;
        let step: Vec<(usize, f64)> = points
            .par_iter()
            .zip(assignments.par_iter())
            .map(|(p, cur)| nearest(p, &centroids, *cur))
            .collect();
        let changed = step.iter().zip(&assignments).any(|((a, _), cur)| Some(*a) != *cur);
        wcss_history.push(step.iter().map(|(_, d)| d).sum());
        for ((a, _), slot) in step.iter().zip(assignments.iter_mut()) {
            *slot = Some(*a);
        }
        if !changed {
            converged = true;
            break;
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, a) in points.iter().zip(&assignments) {
            let a = a.expect("assigned");
            counts[a] += 1;
            for (s, x) in sums[a].iter_mut().zip(p) {
                *s += x;
            }
        }
        for ((c, s), n) in centroids.iter_mut().zip(sums).zip(counts) {
            if n > 0 {
                *c = s.into_iter().map(|x| x / n as f64).collect();
            }
        }
    }
    Ok(KMeans {
        centroids,
        assignments: assignments.into_iter().map(|a| a.expect("assigned")).collect(),
        wcss_history,
        iterations,
        converged,
    })
}

/// One clustered instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterPoint {
    pub conv_id: String,
    pub text: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub quadruplet_ref: Option<QuadrupletRef>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    pub id: usize,
    /// Unit-normalized mean of the members.
    pub centroid: Vec<f64>,
    pub size: usize,
    /// Member point indices, nearest to the centroid first.
    pub members: Vec<usize>,
    pub representatives: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterReport {
    pub kind: ComponentKind,
    pub k: usize,
    pub seed: u64,
    pub iterations: usize,
    pub converged: bool,
    pub wcss_history: Vec<f64>,
    pub clusters: Vec<Cluster>,
    pub points: Vec<ClusterPoint>,
}

impl ClusterReport {
    /// Plain-text table: cluster id, size and representative samples.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:>7}  {:>6}  representative samples", "cluster", "size");
        for c in &self.clusters {
            let _ = writeln!(out, "{:>7}  {:>6}  {}", c.id, c.size, c.representatives.join("; "));
        }
        let _ = writeln!(
            out,
            "\n{} {} instances, k={}, {} iterations{}",
            self.points.len(),
            self.kind,
            self.k,
            self.iterations,
            if self.converged { "" } else { " (iteration cap reached)" }
        );
        out
    }
}

/// Up to `count` distinct member texts of `cluster_id`, nearest first.
pub fn representatives(report: &ClusterReport, cluster_id: usize, count: usize) -> Vec<String> {
    let Some(cluster) = report.clusters.get(cluster_id) else {
        return Vec::new();
    };
    let mut seen = HashSet::new();
    cluster
        .members
        .iter()
        .map(|&i| &report.points[i].text)
        .filter(|t| seen.insert(t.as_str()))
        .take(count)
        .cloned()
        .collect()
}

/// Clusters labelled vectors and builds a report with `rep_count`
/// representatives per cluster.
pub fn cluster_points(
    kind: ComponentKind,
    points: Vec<ClusterPoint>,
    vectors: &[EmbeddingVector],
    k: usize,
    seed: u64,
    rep_count: usize,
) -> Result<ClusterReport, AnalysisError> {
    let unit: Vec<Vec<f64>> = vectors.iter().map(|v| l2_normalize(v).into_values()).collect();
    let km = kmeans(&unit, k, seed, MAX_ITERATIONS)?;
    let mut clusters: Vec<Cluster> = km
        .centroids
        .iter()
        .enumerate()
        .map(|(id, c)| Cluster {
            id,
            centroid: l2_normalize(&EmbeddingVector::new(c.clone())).into_values(),
            size: 0,
            members: Vec::new(),
            representatives: Vec::new(),
        })
        .collect();
    for (i, &a) in km.assignments.iter().enumerate() {
        clusters[a].members.push(i);
    }
    for (c, centroid) in clusters.iter_mut().zip(&km.centroids) {
        c.size = c.members.len();
        c.members.sort_by(|&a, &b| {
            sq_dist(&unit[a], centroid)
                .total_cmp(&sq_dist(&unit[b], centroid))
                .then(a.cmp(&b))
        });
    }
    let mut report = ClusterReport {
        kind,
        k,
        seed,
        iterations: km.iterations,
        converged: km.converged,
        wcss_history: km.wcss_history,
        clusters,
        points,
    };
    for id in 0..report.clusters.len() {
        report.clusters[id].representatives = representatives(&report, id, rep_count);
    }
    Ok(report)
}

/// Clusters every SV, SVO or SVOA instance in the store.
pub fn cluster_components(
    store: &SemanticIndexStore,
    kind: ComponentKind,
    k: usize,
    seed: u64,
) -> Result<ClusterReport, AnalysisError> {
    if !kind.is_semantic() {
        return Err(AnalysisError::UnsupportedKind(kind));
    }
    let mut points = Vec::new();
    let mut vectors = Vec::new();
    for entry in store.entries() {
        for inst in entry.instances(kind) {
            points.push(ClusterPoint {
                conv_id: entry.conv_id().to_owned(),
                text: inst.text.clone(),
                quadruplet_ref: inst.quadruplet_ref.clone(),
            });
            vectors.push(inst.embedding.clone());
        }
    }
    cluster_points(kind, points, &vectors, k, seed, DEFAULT_REPRESENTATIVES)
}
