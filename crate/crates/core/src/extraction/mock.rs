//! Deterministic offline chat backends.
//!
//! [`MockChatBackend`] answers the three extraction prompts with a small rule
//! table ([`mock_extract_text`]) so ingestion can run without a model:
//!
//! * verb: `asks` for `?`-terminated text, `thanks` when the first token is
//!   "thanks"/"thank", otherwise `mentions`;
//! * object: `person` for thanks, otherwise the most frequent noun-like token
//!   (alphabetic, three or more letters, not a stopword, common verb or `-ly`
//!   adverb; earliest wins ties); messages without such a token yield nothing;
//! * adjunct: the message tail starting at the first preposition from
//!   [`PREPOSITIONS`], at most five words.

use std::collections::HashMap;

use serde_json::{json, Value};

use super::backend::{ChatBackend, ChatError, ChatRequest};
use super::prompt::{ADJUNCT_KEY, QUADRUPLET_KEY, TRIPLET_KEY};
use crate::types::ConversationRecord;

pub const PREPOSITIONS: &[&str] = &[
    "about",
    "regarding",
    "for",
    "with",
    "because",
    "due",
    "from",
    "during",
    "over",
    "towards",
    "toward",
    "in",
    "on",
    "at",
    "under",
];

const MAX_ADJUNCT_WORDS: usize = 5;

const STOPWORDS: &[&str] = &[
    "a",
    "about",
    "after",
    "again",
    "all",
    "also",
    "am",
    "an",
    "and",
    "any",
    "are",
    "around",
    "as",
    "at",
    "back",
    "be",
    "because",
    "been",
    "before",
    "being",
    "but",
    "by",
    "can",
    "could",
    "did",
    "do",
    "does",
    "doing",
    "don",
    "done",
    "due",
    "during",
    "each",
    "even",
    "ever",
    "every",
    "few",
    "for",
    "from",
    "get",
    "give",
    "go",
    "going",
    "good",
    "got",
    "great",
    "had",
    "has",
    "have",
    "having",
    "he",
    "hello",
    "help",
    "her",
    "here",
    "hey",
    "hi",
    "him",
    "his",
    "how",
    "i",
    "if",
    "im",
    "in",
    "into",
    "is",
    "it",
    "its",
    "just",
    "know",
    "let",
    "like",
    "look",
    "lot",
    "make",
    "many",
    "may",
    "me",
    "might",
    "more",
    "most",
    "much",
    "must",
    "my",
    "need",
    "no",
    "not",
    "now",
    "of",
    "off",
    "oh",
    "ok",
    "okay",
    "on",
    "one",
    "only",
    "or",
    "other",
    "our",
    "out",
    "over",
    "please",
    "really",
    "regarding",
    "right",
    "said",
    "say",
    "see",
    "she",
    "should",
    "so",
    "some",
    "something",
    "sure",
    "take",
    "tell",
    "than",
    "thank",
    "thanks",
    "that",
    "the",
    "their",
    "them",
    "then",
    "there",
    "these",
    "they",
    "thing",
    "things",
    "think",
    "this",
    "those",
    "through",
    "to",
    "too",
    "towards",
    "under",
    "up",
    "us",
    "use",
    "very",
    "want",
    "was",
    "way",
    "we",
    "well",
    "were",
    "what",
    "when",
    "where",
    "which",
    "while",
    "who",
    "why",
    "will",
    "with",
    "would",
    "yeah",
    "yes",
    "yet",
    "you",
    "your",
    "yours",
];

/// Frequent verbs and frequency adverbs; never noun-like.
const NON_NOUNS: &[&str] = &[
    "always",
    "ask",
    "asked",
    "believe",
    "bring",
    "call",
    "came",
    "come",
    "discuss",
    "discussed",
    "enjoy",
    "enjoyed",
    "feel",
    "find",
    "found",
    "keep",
    "kept",
    "leave",
    "love",
    "loved",
    "mean",
    "meant",
    "never",
    "often",
    "prefer",
    "put",
    "read",
    "reading",
    "remember",
    "seem",
    "seemed",
    "sometimes",
    "spend",
    "spent",
    "start",
    "started",
    "stay",
    "talk",
    "talked",
    "tried",
    "try",
    "understand",
    "usually",
    "wait",
    "watch",
    "wonder",
    "work",
    "worked",
    "write",
];

/// One rule-table output: `(subject, verb, object, adjunct)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MockQuadruplet {
    pub subject: String,
    pub verb: String,
    pub object: String,
    pub adjunct: Option<String>,
}

fn is_stopword(token: &str) -> bool {
    STOPWORDS.binary_search(&token).is_ok()
}

fn is_noun_like(token: &str) -> bool {
    token.chars().count() >= 3
        && token.chars().all(char::is_alphabetic)
        && !is_stopword(token)
        && NON_NOUNS.binary_search(&token).is_err()
        && !token.ends_with("ly")
}

fn tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn mock_verb(text: &str, toks: &[String]) -> &'static str {
    if text.trim_end().ends_with('?') {
        "asks"
    } else if matches!(toks.first().map(String::as_str), Some("thanks" | "thank")) {
        "thanks"
    } else {
        "mentions"
    }
}

fn mock_object(toks: &[String]) -> Option<String> {
    let mut counts: HashMap<&str, (usize, usize)> = HashMap::new();
    for (pos, t) in toks.iter().enumerate() {
        if is_noun_like(t) {
            counts.entry(t).or_insert((0, pos)).0 += 1;
        }
    }
    counts
        .into_iter()
        .max_by(|a, b| a.1 .0.cmp(&b.1 .0).then(b.1 .1.cmp(&a.1 .1)))
        .map(|(t, _)| t.to_owned())
}

/// The prepositional tail of a message, if any.
pub fn mock_adjunct(text: &str) -> Option<String> {
    let words: Vec<&str> = text
        .split_whitespace()
        .map(|w| w.trim_matches(|c: char| !c.is_alphanumeric() && c != '\''))
        .filter(|w| !w.is_empty())
        .collect();
    let start = words
        .iter()
        .position(|w| PREPOSITIONS.contains(&w.to_lowercase().as_str()))?;
    let tail: Vec<&str> = words[start..].iter().take(MAX_ADJUNCT_WORDS).copied().collect();
    (tail.len() >= 2).then(|| tail.join(" ").to_lowercase())
}

/// Rule-table extraction for a single utterance.
pub fn mock_extract_text(role: &str, text: &str) -> Vec<MockQuadruplet> {
    let toks = tokens(text);
    let verb = mock_verb(text, &toks);
    let object = if verb == "thanks" {
        Some("person".to_owned())
    } else {
        mock_object(&toks)
    };
    object
        .map(|object| MockQuadruplet {
            subject: role.to_owned(),
            verb: verb.to_owned(),
            object,
            adjunct: mock_adjunct(text),
        })
        .into_iter()
        .collect()
}

/// Rule-table extraction for one message of a conversation.
///
/// # Panics
///
/// If `msg_index` is out of range.
pub fn mock_extract(conv: &ConversationRecord, msg_index: usize) -> Vec<MockQuadruplet> {
    let m = &conv.messages()[msg_index];
    mock_extract_text(&m.role, &m.text)
}

/// Pulls `(role, message)` out of a filled user template.
fn parse_message_section(user: &str) -> Option<(String, String)> {
    const MARKER: &str = "[$message$]\n";
    let start = user.find(MARKER)? + MARKER.len();
    let body = &user[start..];
    let end = ["\n\n[$information list$]", "\n\nExtract as much"]
        .iter()
        .filter_map(|m| body.rfind(m))
        .min()?;
    let line = &body[..end];
    let (role, message) = line.split_once(": ")?;
    Some((role.to_owned(), message.to_owned()))
}

fn parse_info_list(user: &str) -> Vec<String> {
    const MARKER: &str = "[$information list$]\n";
    let Some(start) = user.find(MARKER).map(|i| i + MARKER.len()) else {
        return Vec::new();
    };
    let body = &user[start..];
    let end = body.find("\n\n").unwrap_or(body.len());
    body[..end]
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(str::to_owned)
        .collect()
}

/// Offline chat backend driven by the rule table.
#[derive(Debug, Clone)]
pub struct MockChatBackend {
    model: String,
}

impl Default for MockChatBackend {
    fn default() -> Self {
        Self {
            model: "mock-rules-v1".to_owned(),
        }
    }
}

impl MockChatBackend {
    pub fn new() -> Self {
        Self::default()
    }
}

impl ChatBackend for MockChatBackend {
    fn model(&self) -> &str {
        &self.model
    }

    fn complete(&self, request: &ChatRequest) -> Result<String, ChatError> {
        let (role, message) = parse_message_section(&request.user)
            .ok_or_else(|| ChatError("mock backend: no [$message$] section in prompt".into()))?;
        let quads = mock_extract_text(&role, &message);
        let no_info = || "no information".to_owned();
        let body = if request.system.contains(QUADRUPLET_KEY) {
            let items: Vec<Value> = quads
                .iter()
                .map(|q| {
                    json!({ format!("{} {}", q.subject, q.verb): {
                        "target": q.object,
                        "detail": q.adjunct.clone().unwrap_or_else(no_info),
                    }})
                })
                .collect();
            json!({ QUADRUPLET_KEY: items })
        } else if request.system.contains(ADJUNCT_KEY) {
            let detail = mock_adjunct(&message).unwrap_or_else(no_info);
            let items: Vec<Value> = parse_info_list(&request.user)
                .into_iter()
                .map(|line| json!({ line: detail }))
                .collect();
            json!({ ADJUNCT_KEY: items })
        } else if request.system.contains(TRIPLET_KEY) {
            let items: Vec<Value> = quads
                .iter()
                .map(|q| json!({ format!("{} {}", q.subject, q.verb): q.object }))
                .collect();
            json!({ TRIPLET_KEY: items })
        } else {
            return Err(ChatError("mock backend: unrecognized prompt".into()));
        };
        Ok(body.to_string())
    }
}

/// Chat backend backed by a closure; handy for scripted responses in tests.
pub struct FnChatBackend<F> {
    model: String,
    respond: F,
}

impl<F> FnChatBackend<F>
where
    F: Fn(&ChatRequest) -> Result<String, ChatError> + Send + Sync,
{
    pub fn new(respond: F) -> Self {
        Self {
            model: "scripted".to_owned(),
            respond,
        }
    }
}

impl<F> ChatBackend for FnChatBackend<F>
where
    F: Fn(&ChatRequest) -> Result<String, ChatError> + Send + Sync,
{
    fn model(&self) -> &str {
        &self.model
    }

    fn complete(&self, request: &ChatRequest) -> Result<String, ChatError> {
        (self.respond)(request)
    }
}
