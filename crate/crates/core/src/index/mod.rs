//! The semantic index: per-conversation embedded component instances.
//!
//! Each [`IndexEntry`] holds one conversation-level instance plus the
//! message, SV, SVO and SVOA instances derived from it. Rendered texts are
//! unique per kind within a conversation; when several quadruplets render to
//! the same SV (or SVO/SVOA) text, the instance references the first of them.

mod ingest;
mod persist;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use ingest::{ingest_conversation, Ingestor};
pub use persist::{load, load_lenient, persist, IndexWriter, LenientLoad};

use crate::embedding::EmbedError;
use crate::extraction::{ExtractionError, ExtractionMode, ExtractionWarning};
use crate::render::render_component_text;
use crate::types::{ComponentInstance, ComponentKind, ConversationRecord, QuadrupletRef, SvoaQuadruplet};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("index file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("unsupported index format version {found} (expected {expected})")]
    UnsupportedVersion { found: u32, expected: u32 },
    #[error("invalid manifest: {0}")]
    Manifest(String),
    #[error("record {line}: {reason}")]
    Record { line: usize, reason: String },
    #[error("conversation {conv_id}: {kind} instance has dimension {got}, index dimension is {expected}")]
    Dimension {
        conv_id: String,
        kind: ComponentKind,
        expected: usize,
        got: usize,
    },
    #[error("conversation {0} is already indexed")]
    DuplicateConversation(String),
    #[error("conversation {conv_id} is inconsistent: {reason}")]
    Inconsistent { conv_id: String, reason: String },
    #[error("unknown quadruplet reference {0}")]
    UnknownQuadruplet(QuadrupletRef),
    #[error("embedding model {found} does not match index model {expected}")]
    ModelMismatch { expected: String, found: String },
    #[error(transparent)]
    Extraction(#[from] ExtractionError),
    #[error("embedding failed for conversation {conv_id}: {source}")]
    Embedding {
        conv_id: String,
        #[source]
        source: EmbedError,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub model_id: String,
    pub dimension: usize,
    pub extraction_mode: ExtractionMode,
    /// Seconds since the Unix epoch.
    pub created_at: u64,
}

impl Manifest {
    pub fn new(
        model_id: impl Into<String>,
        dimension: usize,
        extraction_mode: ExtractionMode,
        created_at: u64,
    ) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            model_id: model_id.into(),
            dimension,
            extraction_mode,
            created_at,
        }
    }
}

/// A quadruplet with its stable reference.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexedQuadruplet {
    #[serde(rename = "ref")]
    pub id: QuadrupletRef,
    #[serde(flatten)]
    pub quadruplet: SvoaQuadruplet,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndexEntry {
    pub conversation: ConversationRecord,
    pub conversation_instance: ComponentInstance,
    pub messages: Vec<ComponentInstance>,
    pub sv: Vec<ComponentInstance>,
    pub svo: Vec<ComponentInstance>,
    pub svoa: Vec<ComponentInstance>,
    pub quadruplets: Vec<IndexedQuadruplet>,
    pub warnings: Vec<ExtractionWarning>,
}

impl IndexEntry {
    pub fn conv_id(&self) -> &str {
        self.conversation.conv_id()
    }

    pub fn instances(&self, kind: ComponentKind) -> &[ComponentInstance] {
        match kind {
            ComponentKind::Conversation => std::slice::from_ref(&self.conversation_instance),
            ComponentKind::Message => &self.messages,
            ComponentKind::SV => &self.sv,
            ComponentKind::SVO => &self.svo,
            ComponentKind::SVOA => &self.svoa,
        }
    }

    fn instances_mut(&mut self, kind: ComponentKind) -> &mut Vec<ComponentInstance> {
        match kind {
            ComponentKind::Message => &mut self.messages,
            ComponentKind::SV => &mut self.sv,
            ComponentKind::SVO => &mut self.svo,
            ComponentKind::SVOA => &mut self.svoa,
            ComponentKind::Conversation => unreachable!("conversation instance is not a list"),
        }
    }

    pub fn all_instances(&self) -> impl Iterator<Item = &ComponentInstance> {
        ComponentKind::ALL.into_iter().flat_map(|k| self.instances(k).iter())
    }

    pub fn quadruplet(&self, id: &QuadrupletRef) -> Option<&SvoaQuadruplet> {
        self.quadruplets.iter().find(|q| &q.id == id).map(|q| &q.quadruplet)
    }

    /// Checks every store invariant that concerns a single entry.
    pub fn validate(&self, dimension: usize) -> Result<(), IndexError> {
        let conv_id = self.conv_id().to_owned();
        let inconsistent = |reason: String| IndexError::Inconsistent {
            conv_id: conv_id.clone(),
            reason,
        };
        for kind in ComponentKind::ALL {
            let mut seen = std::collections::HashSet::new();
            for inst in self.instances(kind) {
                if inst.kind != kind || !inst.is_well_formed() {
                    return Err(inconsistent(format!("malformed {kind} instance {:?}", inst.text)));
                }
                if inst.embedding.dimension() != dimension {
                    return Err(IndexError::Dimension {
                        conv_id: conv_id.clone(),
                        kind,
                        expected: dimension,
                        got: inst.embedding.dimension(),
                    });
                }
                if let Some(i) = inst.source_message_index {
                    if i >= self.conversation.len() {
                        return Err(inconsistent(format!("{kind} instance points at message {i}")));
                    }
                }
                if let Some(r) = &inst.quadruplet_ref {
                    if self.quadruplet(r).is_none() {
                        return Err(inconsistent(format!(
                            "{kind} instance references unknown quadruplet {r}"
                        )));
                    }
                }
                if !seen.insert(inst.text.as_str()) {
                    return Err(inconsistent(format!("duplicate {kind} text {:?}", inst.text)));
                }
            }
        }
        Ok(())
    }
}

/// Instance counts per kind.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KindCounts {
    pub conversation: usize,
    pub message: usize,
    pub sv: usize,
    pub svo: usize,
    pub svoa: usize,
}

impl KindCounts {
    fn of(entry: &IndexEntry) -> Self {
        Self {
            conversation: 1,
            message: entry.messages.len(),
            sv: entry.sv.len(),
            svo: entry.svo.len(),
            svoa: entry.svoa.len(),
        }
    }

    pub fn get(&self, kind: ComponentKind) -> usize {
        match kind {
            ComponentKind::Conversation => self.conversation,
            ComponentKind::Message => self.message,
            ComponentKind::SV => self.sv,
            ComponentKind::SVO => self.svo,
            ComponentKind::SVOA => self.svoa,
        }
    }

    pub fn total(&self) -> usize {
        self.conversation + self.message + self.sv + self.svo + self.svoa
    }

    fn add(&mut self, other: &Self) {
        self.conversation += other.conversation;
        self.message += other.message;
        self.sv += other.sv;
        self.svo += other.svo;
        self.svoa += other.svoa;
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConversationStats {
    pub conv_id: String,
    pub messages: usize,
    pub quadruplets: usize,
    pub instances: KindCounts,
    pub warnings: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexStats {
    pub conversations: usize,
    pub messages: usize,
    pub quadruplets: usize,
    pub instances: KindCounts,
    pub warnings: usize,
    pub per_conversation: Vec<ConversationStats>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SemanticIndexStore {
    manifest: Manifest,
    entries: BTreeMap<String, IndexEntry>,
}

impl SemanticIndexStore {
    pub fn new(manifest: Manifest) -> Self {
        Self {
            manifest,
            entries: BTreeMap::new(),
        }
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn dimension(&self) -> usize {
        self.manifest.dimension
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries in ascending `conv_id` order.
    pub fn entries(&self) -> impl ExactSizeIterator<Item = &IndexEntry> {
        self.entries.values()
    }

    pub fn get(&self, conv_id: &str) -> Option<&IndexEntry> {
        self.entries.get(conv_id)
    }

    pub fn contains(&self, conv_id: &str) -> bool {
        self.entries.contains_key(conv_id)
    }

    pub fn conv_ids(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Adds a validated entry. The store is unchanged on error.
    pub fn insert(&mut self, entry: IndexEntry) -> Result<(), IndexError> {
        entry.validate(self.manifest.dimension)?;
        if self.entries.contains_key(entry.conv_id()) {
            return Err(IndexError::DuplicateConversation(entry.conv_id().to_owned()));
        }
        self.entries.insert(entry.conv_id().to_owned(), entry);
        Ok(())
    }

    /// Inserts without validation, for tests that build deliberately loose entries.
    #[cfg(test)]
    pub(crate) fn insert_unchecked(&mut self, entry: IndexEntry) {
        self.entries.insert(entry.conv_id().to_owned(), entry);
    }

    /// Removes a quadruplet and the SV/SVO/SVOA instances it owns.
    ///
    /// An instance whose text is still produced by another quadruplet of the
    /// same conversation is kept and re-pointed at that quadruplet.
    /// Conversation and message instances are never touched.
    pub fn remove_index(&mut self, id: &QuadrupletRef) -> Result<SvoaQuadruplet, IndexError> {
        let entry = self
            .entries
            .values_mut()
            .find(|e| e.quadruplets.iter().any(|q| &q.id == id))
            .ok_or_else(|| IndexError::UnknownQuadruplet(id.clone()))?;
        let pos = entry.quadruplets.iter().position(|q| &q.id == id).expect("found above");
        let removed = entry.quadruplets.remove(pos).quadruplet;

        for kind in ComponentKind::SEMANTIC {
            let survivors: Vec<(QuadrupletRef, String)> = entry
                .quadruplets
                .iter()
                .map(|q| (q.id.clone(), render_component_text(&q.quadruplet, kind)))
                .collect();
            let list = entry.instances_mut(kind);
            list.retain_mut(|inst| {
                if inst.quadruplet_ref.as_ref() != Some(id) {
                    return true;
                }
                match survivors.iter().find(|(_, text)| *text == inst.text) {
                    Some((other, _)) => {
                        inst.quadruplet_ref = Some(other.clone());
                        true
                    }
                    None => false,
                }
            });
        }
        Ok(removed)
    }

    pub fn stats(&self) -> IndexStats {
        let mut stats = IndexStats {
            conversations: self.entries.len(),
            ..Default::default()
        };
        for entry in self.entries.values() {
            let counts = KindCounts::of(entry);
            stats.instances.add(&counts);
            stats.messages += entry.conversation.len();
            stats.quadruplets += entry.quadruplets.len();
            stats.warnings += entry.warnings.len();
            stats.per_conversation.push(ConversationStats {
                conv_id: entry.conv_id().to_owned(),
                messages: entry.conversation.len(),
                quadruplets: entry.quadruplets.len(),
                instances: counts,
                warnings: entry.warnings.len(),
            });
        }
        stats
    }

    /// Bitwise equality: same manifest, same entries, identical vector bits.
    pub fn bit_eq(&self, other: &Self) -> bool {
        self.manifest == other.manifest
            && self.entries.len() == other.entries.len()
            && self.entries.values().zip(other.entries.values()).all(|(a, b)| {
                a.conversation == b.conversation
                    && a.quadruplets == b.quadruplets
                    && a.warnings == b.warnings
                    && ComponentKind::ALL.iter().all(|&k| {
                        let (x, y) = (a.instances(k), b.instances(k));
                        x.len() == y.len()
                            && x.iter().zip(y).all(|(p, q)| {
                                p.kind == q.kind
                                    && p.text == q.text
                                    && p.source_message_index == q.source_message_index
                                    && p.quadruplet_ref == q.quadruplet_ref
                                    && p.embedding.bit_eq(&q.embedding)
                            })
                    })
            })
    }
}

#[cfg(test)]
pub(crate) mod test_support {
    use super::*;
    use crate::embedding::hashed_embed;
    use crate::render::{render_conversation_text, render_message_text};
    use crate::types::Turn;

    pub const DIM: usize = 32;

    pub fn instance(
        kind: ComponentKind,
        text: &str,
        msg: Option<usize>,
        r: Option<&QuadrupletRef>,
    ) -> ComponentInstance {
        ComponentInstance {
            kind,
            text: text.to_owned(),
            embedding: hashed_embed(text, DIM),
            source_message_index: msg,
            quadruplet_ref: r.cloned(),
        }
    }

    /// Builds an entry by hand from turns and quadruplets (message index, verb, object, adjunct).
    pub fn entry(conv_id: &str, turns: &[(&str, &str)], quads: &[(usize, &str, &str, Option<&str>)]) -> IndexEntry {
        let conversation =
            ConversationRecord::from_turns(conv_id, turns.iter().map(|(r, t)| Turn::new(*r, *t))).unwrap();
        let mut per_message = vec![0; turns.len()];
        let quadruplets: Vec<IndexedQuadruplet> = quads
            .iter()
            .map(|(m, v, o, a)| {
                let ordinal = per_message[*m];
                per_message[*m] += 1;
                IndexedQuadruplet {
                    id: QuadrupletRef::new(conv_id, *m, ordinal),
                    quadruplet: SvoaQuadruplet::new(turns[*m].0, *v, *o, a.map(str::to_owned), *m),
                }
            })
            .collect();
        let mut e = IndexEntry {
            conversation_instance: instance(
                ComponentKind::Conversation,
                &render_conversation_text(&conversation),
                None,
                None,
            ),
            messages: conversation
                .messages()
                .iter()
                .map(|m| instance(ComponentKind::Message, &render_message_text(m), Some(m.index), None))
                .collect(),
            sv: Vec::new(),
            svo: Vec::new(),
            svoa: Vec::new(),
            quadruplets: Vec::new(),
            warnings: Vec::new(),
            conversation,
        };
        for q in &quadruplets {
            for kind in ComponentKind::SEMANTIC {
                let text = render_component_text(&q.quadruplet, kind);
                let list = e.instances_mut(kind);
                if !list.iter().any(|i| i.text == text) {
                    list.push(instance(
                        kind,
                        &text,
                        Some(q.quadruplet.source_message_index),
                        Some(&q.id),
                    ));
                }
            }
        }
        e.quadruplets = quadruplets;
        e
    }

    pub fn store(entries: Vec<IndexEntry>) -> SemanticIndexStore {
        let mut s = SemanticIndexStore::new(Manifest::new("hashed-test", DIM, ExtractionMode::TwoStep, 0));
        for e in entries {
            s.insert(e).unwrap();
        }
        s
    }
}
