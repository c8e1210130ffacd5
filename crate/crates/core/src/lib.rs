//! Conversational-data retrieval over SVOA semantic indices.
//!
//! Conversations are broken into subject-verb-object-adjunct quadruplets by a
//! chat backend, five component kinds are embedded per conversation, and
//! queries are scored by max-aggregated cosine similarity per kind.

pub mod analysis;
pub mod embedding;
pub mod eval;
pub mod extraction;
pub mod index;
pub mod render;
pub mod retrieval;
pub mod types;
pub mod vector;

pub use types::{
    ComponentInstance, ComponentKind, ConversationRecord, Message, QuadrupletRef, SvoaQuadruplet, Turn, ValidationError,
};
pub use vector::{cosine_similarity, l2_normalize, EmbeddingVector};
