use std::collections::HashSet;

use super::{IndexEntry, IndexError, IndexedQuadruplet, Manifest};
use crate::embedding::Embedder;
use crate::extraction::{extract_conversation, ChatBackend, ExtractionConfig};
use crate::render::{render_component_text, render_conversation_text, render_message_text};
use crate::types::{ComponentInstance, ComponentKind, ConversationRecord, QuadrupletRef};

struct Pending {
    kind: ComponentKind,
    text: String,
    source_message_index: Option<usize>,
    quadruplet_ref: Option<QuadrupletRef>,
}

/// Extracts, renders and embeds one conversation.
///
/// All texts go to the embedder in a single call, so an embedding failure
/// leaves nothing behind. Extraction warnings are kept on the entry.
pub fn ingest_conversation(
    conv: &ConversationRecord,
    cfg: &ExtractionConfig,
    chat: &dyn ChatBackend,
    embedder: &Embedder,
) -> Result<IndexEntry, IndexError> {
    let extraction = extract_conversation(conv, cfg, chat)?;
    let conv_id = conv.conv_id();

    let mut ordinals = vec![0usize; conv.len()];
    let quadruplets: Vec<IndexedQuadruplet> = extraction
        .quadruplets
        .into_iter()
        .map(|q| {
            let m = q.source_message_index;
            let id = QuadrupletRef::new(conv_id, m, ordinals[m]);
            ordinals[m] += 1;
            IndexedQuadruplet { id, quadruplet: q }
        })
        .collect();

    let mut pending = vec![Pending {
        kind: ComponentKind::Conversation,
        text: render_conversation_text(conv),
        source_message_index: None,
        quadruplet_ref: None,
    }];
    let mut seen: HashSet<(ComponentKind, String)> = HashSet::new();
    for m in conv.messages() {
        let text = render_message_text(m);
        if seen.insert((ComponentKind::Message, text.clone())) {
            pending.push(Pending {
                kind: ComponentKind::Message,
                text,
                source_message_index: Some(m.index),
                quadruplet_ref: None,
            });
        }
    }
    for kind in ComponentKind::SEMANTIC {
        for q in &quadruplets {
            let text = render_component_text(&q.quadruplet, kind);
            if seen.insert((kind, text.clone())) {
                pending.push(Pending {
                    kind,
                    text,
                    source_message_index: Some(q.quadruplet.source_message_index),
                    quadruplet_ref: Some(q.id.clone()),
                });
            }
        }
    }

    let texts: Vec<&str> = pending.iter().map(|p| p.text.as_str()).collect();
    let vectors = embedder.embed(&texts).map_err(|source| IndexError::Embedding {
        conv_id: conv_id.to_owned(),
        source,
    })?;

    let mut instances = pending
        .into_iter()
        .zip(vectors)
        .map(|(p, embedding)| ComponentInstance {
            kind: p.kind,
            text: p.text,
            embedding,
            source_message_index: p.source_message_index,
            quadruplet_ref: p.quadruplet_ref,
        });
    let conversation_instance = instances.next().expect("conversation instance is first");
    let mut entry = IndexEntry {
        conversation: conv.clone(),
        conversation_instance,
        messages: Vec::new(),
        sv: Vec::new(),
        svo: Vec::new(),
        svoa: Vec::new(),
        quadruplets,
        warnings: extraction.warnings,
    };
    for inst in instances {
        entry.instances_mut(inst.kind).push(inst);
    }
    Ok(entry)
}

/// Extraction settings, chat backend and embedder for repeated ingestion.
pub struct Ingestor<'a> {
    pub config: ExtractionConfig,
    pub chat: &'a dyn ChatBackend,
    pub embedder: &'a Embedder,
}

impl<'a> Ingestor<'a> {
    pub fn new(config: ExtractionConfig, chat: &'a dyn ChatBackend, embedder: &'a Embedder) -> Self {
        Self { config, chat, embedder }
    }

    pub fn manifest(&self, created_at: u64) -> Manifest {
        Manifest::new(
            self.embedder.model_id(),
            self.embedder.dimension(),
            self.config.mode,
            created_at,
        )
    }

    pub fn ingest(&self, conv: &ConversationRecord) -> Result<IndexEntry, IndexError> {
        ingest_conversation(conv, &self.config, self.chat, self.embedder)
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::embedding::{EmbedError, EmbedOptions, EmbeddingBackend, EmbeddingCache};
    use crate::extraction::mock::{FnChatBackend, MockChatBackend};
    use crate::extraction::ExtractionMode;
    use crate::types::Turn;
    use crate::vector::EmbeddingVector;

    fn conv(turns: &[(&str, &str)]) -> ConversationRecord {
        ConversationRecord::from_turns("c1", turns.iter().map(|(r, t)| Turn::new(*r, *t))).unwrap()
    }

    #[test]
    fn one_message_with_adjunct_yields_one_of_each() {
        let c = conv(&[("user", "Tell me about the weather forecast for tomorrow")]);
        let e = ingest_conversation(
            &c,
            &ExtractionConfig::default(),
            &MockChatBackend::new(),
            &Embedder::hashed(64),
        )
        .unwrap();
        assert_eq!(e.quadruplets.len(), 1);
        assert!(e.quadruplets[0].quadruplet.adjunct.is_some());
        for kind in ComponentKind::ALL {
            assert_eq!(e.instances(kind).len(), 1, "{kind}");
        }
        assert!(e.validate(64).is_ok());
        assert!(e.warnings.is_empty());
    }

    #[test]
    fn absent_adjunct_svoa_equals_svo() {
        let c = conv(&[("user", "Thanks!")]);
        let e = ingest_conversation(
            &c,
            &ExtractionConfig::default(),
            &MockChatBackend::new(),
            &Embedder::hashed(64),
        )
        .unwrap();
        assert_eq!(e.svoa.len(), 1);
        assert_eq!(e.svoa[0].text, e.svo[0].text);
        assert_eq!(e.svo[0].text, "user thanks person");
    }

    #[test]
    fn unparseable_step_one_keeps_conversation_and_messages() {
        let chat = FnChatBackend::new(|_| Ok("I am not JSON".to_owned()));
        let c = conv(&[("user", "hello there"), ("assistant", "hi")]);
        let e = ingest_conversation(&c, &ExtractionConfig::default(), &chat, &Embedder::hashed(32)).unwrap();
        assert_eq!(e.messages.len(), 2);
        assert!(e.sv.is_empty() && e.svo.is_empty() && e.svoa.is_empty());
        assert_eq!(e.warnings.len(), 2);
    }

    struct Failing;

    impl EmbeddingBackend for Failing {
        fn model_id(&self) -> &str {
            "failing"
        }

        fn dimension(&self) -> usize {
            4
        }

        fn embed_batch(&self, _: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError> {
            Err(EmbedError::Transport("down".into()))
        }
    }

    #[test]
    fn embedding_failure_is_an_error() {
        let embedder = Embedder::new(
            Arc::new(Failing),
            Arc::new(EmbeddingCache::in_memory()),
            EmbedOptions {
                max_attempts: 1,
                initial_backoff: std::time::Duration::ZERO,
                ..EmbedOptions::default()
            },
        );
        let c = conv(&[("user", "hello there")]);
        let err =
            ingest_conversation(&c, &ExtractionConfig::default(), &MockChatBackend::new(), &embedder).unwrap_err();
        assert!(matches!(err, IndexError::Embedding { .. }));
    }

    #[test]
    fn single_step_mode_also_indexes() {
        let cfg = ExtractionConfig {
            mode: ExtractionMode::SingleStep,
            ..ExtractionConfig::default()
        };
        let c = conv(&[
            ("user", "What movies do you like?"),
            ("assistant", "I enjoy science fiction movies"),
        ]);
        let e = ingest_conversation(&c, &cfg, &MockChatBackend::new(), &Embedder::hashed(64)).unwrap();
        assert_eq!(e.quadruplets.len(), 2);
        assert!(e
            .quadruplets
            .iter()
            .all(|q| q.quadruplet.subject == c.messages()[q.quadruplet.source_message_index].role));
    }
}
