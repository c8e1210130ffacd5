//! Dense vectors and the similarity function used by every scorer.

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Tolerance on the L2 norm of a vector considered unit length.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("dimension mismatch: left has {left} components, right has {right}")]
pub struct DimensionMismatch {
    pub left: usize,
    pub right: usize,
}

/// A dense embedding. The L2 norm is computed once at construction so the
/// scoring loop only needs one dot product per comparison.
#[derive(Debug, Clone)]
pub struct EmbeddingVector {
    values: Vec<f64>,
    norm: f64,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Self {
        let norm = dot_unchecked(&values, &values).sqrt();
        Self { values, norm }
    }

    pub fn zeros(dimension: usize) -> Self {
        Self {
            values: vec![0.0; dimension],
            norm: 0.0,
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn dimension(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        self.norm
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|v| *v == 0.0)
    }

    /// Unit norm within [`UNIT_NORM_TOLERANCE`], or all-zero.
    pub fn is_normalized(&self) -> bool {
        self.is_zero() || (self.norm - 1.0).abs() <= UNIT_NORM_TOLERANCE
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self::new(self.values.iter().map(|v| v * factor).collect())
    }

    /// Bitwise equality of every component.
    pub fn bit_eq(&self, other: &Self) -> bool {
        self.values.len() == other.values.len()
            && self
                .values
                .iter()
                .zip(&other.values)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

impl PartialEq for EmbeddingVector {
    fn eq(&self, other: &Self) -> bool {
        self.values == other.values
    }
}

impl From<Vec<f64>> for EmbeddingVector {
    fn from(values: Vec<f64>) -> Self {
        Self::new(values)
    }
}

impl Serialize for EmbeddingVector {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.values.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for EmbeddingVector {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        Vec::<f64>::deserialize(deserializer).map(Self::new)
    }
}

#[inline]
fn dot_unchecked(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn dot(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, DimensionMismatch> {
    check_dims(a, b)?;
    Ok(dot_unchecked(&a.values, &b.values))
}

/// Cosine similarity in `[-1, 1]`; 0.0 when either vector has zero norm.
pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, DimensionMismatch> {
    check_dims(a, b)?;
    Ok(cosine_unchecked(a, b))
}

/// Cosine without the dimension check, for callers that validated dimensions
/// up front (the scoring hot path).
#[inline]
pub(crate) fn cosine_unchecked(a: &EmbeddingVector, b: &EmbeddingVector) -> f64 {
    let denom = a.norm * b.norm;
    if denom == 0.0 {
        return 0.0;
    }
    (dot_unchecked(&a.values, &b.values) / denom).clamp(-1.0, 1.0)
}

/// Scales to unit L2 norm; the zero vector maps to itself.
pub fn l2_normalize(v: &EmbeddingVector) -> EmbeddingVector {
    if v.norm == 0.0 {
        return v.clone();
    }
    EmbeddingVector::new(v.values.iter().map(|x| x / v.norm).collect())
}

fn check_dims(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<(), DimensionMismatch> {
    if a.dimension() != b.dimension() {
        return Err(DimensionMismatch {
            left: a.dimension(),
            right: b.dimension(),
        });
    }
    Ok(())
}
