use std::collections::{HashMap, HashSet};

use svoa_core::embedding::Embedder;
use svoa_core::eval::{generate_synthetic, SyntheticConfig};
use svoa_core::extraction::mock::MockChatBackend;
use svoa_core::extraction::ExtractionConfig;
use svoa_core::index::{load, persist, Ingestor, SemanticIndexStore};
use svoa_core::retrieval::{rank_conversations, Bm25Index, Bm25Params, ScoringConfig, COMBINATIONS};

fn small_index() -> (svoa_core::eval::SyntheticData, Embedder, SemanticIndexStore) {
    let data = generate_synthetic(&SyntheticConfig {
        seed: 21,
        conversations: 80,
        queries: 12,
        utterances_per_conversation: 8.0,
        relevant_per_query: 4.0,
    });
    let embedder = Embedder::hashed(256);
    let chat = MockChatBackend::new();
    let ingestor = Ingestor::new(ExtractionConfig::default(), &chat, &embedder);
    let mut store = SemanticIndexStore::new(ingestor.manifest(0));
    for conv in &data.corpus {
        store.insert(ingestor.ingest(conv).unwrap()).unwrap();
    }
    (data, embedder, store)
}

fn assert_separated(scores: &HashMap<String, f64>, relevant: &HashSet<&str>, what: &str) {
    let worst_relevant = relevant.iter().map(|id| scores[*id]).fold(f64::INFINITY, f64::min);
    let best_other = scores
        .iter()
        .filter(|(id, _)| !relevant.contains(id.as_str()))
        .map(|(_, s)| *s)
        .fold(f64::NEG_INFINITY, f64::max);
    assert!(worst_relevant > best_other, "{what}: {worst_relevant} vs {best_other}");
}

#[test]
fn topic_tokens_separate_relevant_from_disjoint_conversations() {
    let (data, _, store) = small_index();
    let bm25 = Bm25Index::from_store(&store, Bm25Params::default());
    for (q, [a, b]) in data.queries.iter().zip(&data.topics) {
        let text = format!("{a} {b}");
        let relevant: HashSet<&str> = q.relevant_conv_ids.iter().map(String::as_str).collect();
        assert_separated(
            &bm25.normalized_scores(&text),
            &relevant,
            &format!("{} bm25", q.query_id),
        );
    }
}

#[test]
fn persisted_index_ranks_identically() {
    let (data, embedder, store) = small_index();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("index.jsonl");
    persist(&store, &path).unwrap();
    let back = load(&path).unwrap();
    for q in &data.queries {
        let v = embedder.embed_one(&q.text).unwrap();
        for (name, _) in COMBINATIONS {
            let cfg = ScoringConfig::from_combination(name).unwrap();
            assert_eq!(
                rank_conversations(&v, &store, &cfg, 10).unwrap(),
                rank_conversations(&v, &back, &cfg, 10).unwrap()
            );
        }
    }
}
