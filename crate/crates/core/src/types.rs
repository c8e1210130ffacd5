//! Domain types shared by every stage of the pipeline.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::vector::EmbeddingVector;

/// Violations of the domain-type invariants.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ValidationError {
    #[error("conversation id must not be empty")]
    EmptyConversationId,
    #[error("conversation {conv_id} has no messages")]
    NoMessages { conv_id: String },
    #[error("conversation {conv_id}: message {index} has an empty role")]
    EmptyRole { conv_id: String, index: usize },
    #[error("conversation {conv_id}: message {index} has empty text")]
    EmptyText { conv_id: String, index: usize },
    #[error("conversation {conv_id}: message at position {position} carries index {index}")]
    NonContiguousIndex {
        conv_id: String,
        position: usize,
        index: usize,
    },
}

/// One utterance of a dialogue.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub index: usize,
    pub role: String,
    pub text: String,
}

/// A dialogue: an ordered list of speaker-tagged utterances.
///
/// Construct through [`ConversationRecord::new`] or [`ConversationRecord::from_turns`]
/// so the invariants (non-empty id, at least one message, contiguous indices,
/// non-empty roles and texts) are checked once.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawConversation", into = "RawConversation")]
pub struct ConversationRecord {
    conv_id: String,
    messages: Vec<Message>,
}

/// A `{role, text}` pair as it appears in corpus files.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub role: String,
    pub text: String,
}

impl Turn {
    pub fn new(role: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            role: role.into(),
            text: text.into(),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct RawConversation {
    conv_id: String,
    messages: Vec<Turn>,
}

impl TryFrom<RawConversation> for ConversationRecord {
    type Error = ValidationError;

    fn try_from(raw: RawConversation) -> Result<Self, Self::Error> {
        ConversationRecord::from_turns(raw.conv_id, raw.messages)
    }
}

impl From<ConversationRecord> for RawConversation {
    fn from(conv: ConversationRecord) -> Self {
        RawConversation {
            conv_id: conv.conv_id,
            messages: conv
                .messages
                .into_iter()
                .map(|m| Turn {
                    role: m.role,
                    text: m.text,
                })
                .collect(),
        }
    }
}

impl ConversationRecord {
    pub fn new(conv_id: impl Into<String>, messages: Vec<Message>) -> Result<Self, ValidationError> {
        let conv_id = conv_id.into();
        if conv_id.trim().is_empty() {
            return Err(ValidationError::EmptyConversationId);
        }
        if messages.is_empty() {
            return Err(ValidationError::NoMessages { conv_id });
        }
        for (position, m) in messages.iter().enumerate() {
            if m.index != position {
                return Err(ValidationError::NonContiguousIndex {
                    conv_id,
                    position,
                    index: m.index,
                });
            }
            if m.role.trim().is_empty() {
                return Err(ValidationError::EmptyRole {
                    conv_id,
                    index: position,
                });
            }
            if m.text.trim().is_empty() {
                return Err(ValidationError::EmptyText {
                    conv_id,
                    index: position,
                });
            }
        }
        Ok(Self { conv_id, messages })
    }

    /// Builds a record from `(role, text)` turns, assigning indices `0..n`.
    pub fn from_turns(
        conv_id: impl Into<String>,
        turns: impl IntoIterator<Item = Turn>,
    ) -> Result<Self, ValidationError> {
        let messages = turns
            .into_iter()
            .enumerate()
            .map(|(index, t)| Message {
                index,
                role: t.role,
                text: t.text,
            })
            .collect();
        Self::new(conv_id, messages)
    }

    pub fn conv_id(&self) -> &str {
        &self.conv_id
    }

    pub fn messages(&self) -> &[Message] {
        &self.messages
    }

    pub fn len(&self) -> usize {
        self.messages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.messages.is_empty()
    }
}

/// One semantic index: subject (always the speaker), verb, object and an
/// optional prepositional adjunct.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SvoaQuadruplet {
    pub subject: String,
    pub verb: String,
    pub object: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adjunct: Option<String>,
    pub source_message_index: usize,
}

impl SvoaQuadruplet {
    /// Builds a quadruplet, folding an empty or "no information" adjunct into `None`.
    pub fn new(
        subject: impl Into<String>,
        verb: impl Into<String>,
        object: impl Into<String>,
        adjunct: Option<String>,
        source_message_index: usize,
    ) -> Self {
        Self {
            subject: subject.into(),
            verb: verb.into(),
            object: object.into(),
            adjunct: adjunct.and_then(|a| normalize_adjunct(&a)),
            source_message_index,
        }
    }
}

/// Returns `None` for empty details and for the "no information" sentinel
/// (case-insensitive, trailing period tolerated).
pub fn normalize_adjunct(detail: &str) -> Option<String> {
    let collapsed = normalize_whitespace(detail);
    let bare = collapsed.trim_end_matches('.').trim();
    if bare.is_empty() || bare.eq_ignore_ascii_case("no information") {
        None
    } else {
        Some(collapsed)
    }
}

/// Collapses runs of whitespace to single spaces and trims the ends.
pub fn normalize_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// The five scored conversational components.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ComponentKind {
    Conversation,
    Message,
    #[serde(rename = "sv")]
    SV,
    #[serde(rename = "svo")]
    SVO,
    #[serde(rename = "svoa")]
    SVOA,
}

impl ComponentKind {
    pub const ALL: [ComponentKind; 5] = [
        ComponentKind::Conversation,
        ComponentKind::Message,
        ComponentKind::SV,
        ComponentKind::SVO,
        ComponentKind::SVOA,
    ];

    /// The kinds derived from quadruplets.
    pub const SEMANTIC: [ComponentKind; 3] = [ComponentKind::SV, ComponentKind::SVO, ComponentKind::SVOA];

    pub fn as_str(self) -> &'static str {
        match self {
            ComponentKind::Conversation => "conversation",
            ComponentKind::Message => "message",
            ComponentKind::SV => "sv",
            ComponentKind::SVO => "svo",
            ComponentKind::SVOA => "svoa",
        }
    }

    /// Position in [`ComponentKind::ALL`].
    pub fn ordinal(self) -> usize {
        self as usize
    }

    pub fn is_semantic(self) -> bool {
        matches!(self, ComponentKind::SV | ComponentKind::SVO | ComponentKind::SVOA)
    }
}

impl fmt::Display for ComponentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ComponentKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "conversation" | "conv" => Ok(ComponentKind::Conversation),
            "message" | "msg" => Ok(ComponentKind::Message),
            "sv" => Ok(ComponentKind::SV),
            "svo" => Ok(ComponentKind::SVO),
            "svoa" => Ok(ComponentKind::SVOA),
            other => Err(format!(
                "unknown component kind {other:?} (expected conversation, message, sv, svo or svoa)"
            )),
        }
    }
}

/// Stable identifier of a quadruplet inside an index: `<conv_id>#<message>.<ordinal>`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct QuadrupletRef(String);

impl QuadrupletRef {
    pub fn new(conv_id: &str, message_index: usize, ordinal: usize) -> Self {
        Self(format!("{conv_id}#{message_index}.{ordinal}"))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl From<&str> for QuadrupletRef {
    fn from(s: &str) -> Self {
        Self(s.to_owned())
    }
}

impl From<String> for QuadrupletRef {
    fn from(s: String) -> Self {
        Self(s)
    }
}

impl fmt::Display for QuadrupletRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// One embedded rendering of a conversational component: the atom the
/// scorer compares queries against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentInstance {
    pub kind: ComponentKind,
    pub text: String,
    pub embedding: EmbeddingVector,
    /// Absent only for the conversation-level instance.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_message_index: Option<usize>,
    /// Present exactly for SV, SVO and SVOA instances.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quadruplet_ref: Option<QuadrupletRef>,
}

impl ComponentInstance {
    /// Checks the kind/field pairing rules.
    pub fn is_well_formed(&self) -> bool {
        (self.kind == ComponentKind::Conversation) == self.source_message_index.is_none()
            && self.kind.is_semantic() == self.quadruplet_ref.is_some()
    }
}
