//! Feature-hashed bag-of-words embeddings.
//!
//! Tokens are the lowercase alphanumeric runs of the text. Each token is
//! hashed with 64-bit FNV-1a over `seed.to_le_bytes() ++ token bytes`; the
//! bucket is `hash % dimension` and the sign is `+1` when bit 63 is clear,
//! `-1` otherwise. Counts are accumulated and the result is L2-normalized.
//! The hash is fixed, so vectors are identical across runs and platforms.

use super::{EmbedError, EmbeddingBackend};
use crate::vector::{l2_normalize, EmbeddingVector};

pub const DEFAULT_HASH_DIMENSION: usize = 256;
pub const DEFAULT_HASH_SEED: u64 = 0x5eed_0001;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(seed: u64, token: &str) -> u64 {
    seed.to_le_bytes()
        .iter()
        .chain(token.as_bytes())
        .fold(FNV_OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

/// Lowercased alphanumeric tokens.
pub fn hash_tokens(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

/// Bucket index and sign for one token.
pub fn token_feature(token: &str, dimension: usize, seed: u64) -> (usize, f64) {
    let h = fnv1a(seed, token);
    let bucket = (h % dimension as u64) as usize;
    let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
    (bucket, sign)
}

pub fn hashed_embed_seeded(text: &str, dimension: usize, seed: u64) -> EmbeddingVector {
    assert!(dimension >= 2, "hashed embedding dimension must be at least 2");
    let mut values = vec![0.0; dimension];
    for token in hash_tokens(text) {
        let (bucket, sign) = token_feature(&token, dimension, seed);
        values[bucket] += sign;
    }
    l2_normalize(&EmbeddingVector::new(values))
}

/// Hashed embedding with the shipped seed.
pub fn hashed_embed(text: &str, dimension: usize) -> EmbeddingVector {
    hashed_embed_seeded(text, dimension, DEFAULT_HASH_SEED)
}

/// Deterministic offline [`EmbeddingBackend`].
#[derive(Debug, Clone)]
pub struct HashedEmbedder {
    dimension: usize,
    seed: u64,
    model_id: String,
}

impl HashedEmbedder {
    pub fn new(dimension: usize) -> Self {
        Self::with_seed(dimension, DEFAULT_HASH_SEED)
    }

    pub fn with_seed(dimension: usize, seed: u64) -> Self {
        assert!(dimension >= 2, "hashed embedding dimension must be at least 2");
        Self {
            dimension,
            seed,
            model_id: format!("hashed-fnv1a-d{dimension}-s{seed:x}"),
        }
    }
}

impl Default for HashedEmbedder {
    fn default() -> Self {
        Self::new(DEFAULT_HASH_DIMENSION)
    }
}

impl EmbeddingBackend for HashedEmbedder {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        Ok(texts
            .iter()
            .map(|t| hashed_embed_seeded(t, self.dimension, self.seed))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vector::cosine_similarity;

    #[test]
    fn deterministic() {
        assert!(hashed_embed("hello world", 256).bit_eq(&hashed_embed("hello world", 256)));
    }

    #[test]
    fn order_free() {
        let c = cosine_similarity(&hashed_embed("alpha beta", 256), &hashed_embed("beta alpha", 256)).unwrap();
        assert!((c - 1.0).abs() < 1e-12);
    }

    #[test]
    fn case_and_punctuation_insensitive() {
        assert!(hashed_embed("Hello, World!", 64).bit_eq(&hashed_embed("hello world", 64)));
    }

    #[test]
    fn empty_text_is_zero() {
        assert!(hashed_embed("", 16).is_zero());
        assert!(hashed_embed("  ?! ", 16).is_zero());
    }

    #[test]
    fn unit_norm() {
        assert!((hashed_embed("some words here", 128).norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fnv_reference_vectors() {
        // Published FNV-1a 64 test vectors, with the seed prefix removed.
        let plain = |s: &str| {
            s.bytes()
                .fold(FNV_OFFSET, |h, b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
        };
        assert_eq!(plain(""), 0xcbf29ce484222325);
        assert_eq!(plain("a"), 0xaf63dc4c8601ec8c);
        assert_eq!(plain("foobar"), 0x85944171f73967e8);
    }
}
