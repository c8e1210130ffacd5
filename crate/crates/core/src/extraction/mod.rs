//! Turning dialogue messages into SVOA quadruplets through a chat backend.
//!
//! The two-step path first asks for subject-verb-object triplets
//! ([`extract_triplets`]) and then for a prepositional adjunct per triplet
//! ([`augment_adjuncts`]). [`extract_single_step`] asks for complete
//! quadruplets in one call and exists for ablation runs.
//!
//! Unparseable responses never abort a run: after the configured number of
//! re-asks the message is skipped (step one) or keeps adjunct-less
//! quadruplets (step two) and an [`ExtractionWarning`] is recorded.

mod backend;
pub mod mock;
pub mod parse;
pub mod prompt;

use std::collections::HashSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use backend::{ChatBackend, ChatError, ChatRequest, FewShotTurn};

use crate::render::render_messages;
use crate::types::{normalize_adjunct, normalize_whitespace, ConversationRecord, SvoaQuadruplet};
use parse::{payload_pairs, value_texts, PayloadError};
use prompt::{PromptVars, ADJUNCT_KEY, QUADRUPLET_KEY, TRIPLET_KEY};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExtractionMode {
    #[default]
    TwoStep,
    SingleStep,
}

impl std::fmt::Display for ExtractionMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ExtractionMode::TwoStep => "two-step",
            ExtractionMode::SingleStep => "single-step",
        })
    }
}

impl std::str::FromStr for ExtractionMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "two-step" => Ok(ExtractionMode::TwoStep),
            "single-step" => Ok(ExtractionMode::SingleStep),
            other => Err(format!(
                "unknown extraction mode {other:?} (expected two-step or single-step)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExtractionConfig {
    /// Number of preceding messages shown as context.
    pub context_window_k: usize,
    pub temperature: f64,
    pub max_tokens: u32,
    /// Re-asks with the identical prompt after an unparseable response.
    pub max_parse_retries: u32,
    pub mode: ExtractionMode,
}

impl Default for ExtractionConfig {
    fn default() -> Self {
        Self {
            context_window_k: 2,
            temperature: 0.0,
            max_tokens: 1024,
            max_parse_retries: 2,
            mode: ExtractionMode::TwoStep,
        }
    }
}

#[derive(Debug, Error)]
pub enum ExtractionError {
    #[error("message index {index} out of range for conversation {conv_id} with {len} messages")]
    IndexOutOfRange { conv_id: String, index: usize, len: usize },
    #[error("conversation {conv_id}, message {msg_index}: {source}")]
    Backend {
        conv_id: String,
        msg_index: usize,
        #[source]
        source: ChatError,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExtractionStage {
    Triplets,
    Adjuncts,
    SingleStep,
}

/// A message-level problem that did not abort ingestion.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractionWarning {
    pub conv_id: String,
    pub msg_index: usize,
    pub stage: ExtractionStage,
    pub reason: String,
    /// Last raw backend response.
    pub raw: String,
}

/// A step-one result; `subject` always equals the message role.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Triplet {
    pub subject: String,
    pub verb: String,
    pub object: String,
}

impl Triplet {
    /// The `subject verb object` line used both in the info list and as the
    /// step-two response key.
    pub fn key(&self) -> String {
        format!("{} {} {}", self.subject, self.verb, self.object)
    }
}

/// Rendered `role: text` lines for the `k` messages preceding `msg_index`.
pub fn build_context_window(conv: &ConversationRecord, msg_index: usize, k: usize) -> Result<String, ExtractionError> {
    check_index(conv, msg_index)?;
    let start = msg_index.saturating_sub(k);
    Ok(render_messages(&conv.messages()[start..msg_index]))
}

fn check_index(conv: &ConversationRecord, msg_index: usize) -> Result<(), ExtractionError> {
    if msg_index >= conv.len() {
        return Err(ExtractionError::IndexOutOfRange {
            conv_id: conv.conv_id().to_owned(),
            index: msg_index,
            len: conv.len(),
        });
    }
    Ok(())
}

fn dedup_key(parts: &[&str]) -> String {
    parts
        .iter()
        .map(|p| normalize_whitespace(p).to_lowercase())
        .collect::<Vec<_>>()
        .join("\u{1f}")
}

/// Splits a `"<role> <verb...>"` key. Returns `None` when the key does not
/// start with the role as a whole word or carries no verb.
fn split_role_key(key: &str, role: &str) -> Option<String> {
    let key = normalize_whitespace(key);
    let role = normalize_whitespace(role);
    if key.len() <= role.len() || !key.is_char_boundary(role.len()) {
        return None;
    }
    let (head, tail) = key.split_at(role.len());
    if !head.eq_ignore_ascii_case(&role) || !tail.starts_with(' ') {
        return None;
    }
    let verb = tail.trim();
    (!verb.is_empty()).then(|| verb.to_owned())
}

struct Call<'a> {
    conv: &'a ConversationRecord,
    msg_index: usize,
    stage: ExtractionStage,
}

/// Calls the backend until `parse` succeeds or the retry budget runs out.
/// `Ok(None)` means every attempt was unparseable; a warning is recorded.
fn ask_with_retries<T>(
    call: &Call<'_>,
    request: &ChatRequest,
    cfg: &ExtractionConfig,
    backend: &dyn ChatBackend,
    warnings: &mut Vec<ExtractionWarning>,
    parse: impl Fn(&str) -> Result<T, PayloadError>,
) -> Result<Option<T>, ExtractionError> {
    let mut last_raw = String::new();
    let mut last_err = None;
    for _ in 0..=cfg.max_parse_retries {
        let raw = backend.complete(request).map_err(|source| ExtractionError::Backend {
            conv_id: call.conv.conv_id().to_owned(),
            msg_index: call.msg_index,
            source,
        })?;
        match parse(&raw) {
            Ok(value) => return Ok(Some(value)),
            Err(e) => {
                last_err = Some(e);
                last_raw = raw;
            }
        }
    }
    let reason = last_err.map(|e| e.to_string()).unwrap_or_default();
    tracing::warn!(
        conv_id = call.conv.conv_id(),
        msg_index = call.msg_index,
        stage = ?call.stage,
        %reason,
        "unparseable extraction response"
    );
    warnings.push(ExtractionWarning {
        conv_id: call.conv.conv_id().to_owned(),
        msg_index: call.msg_index,
        stage: call.stage,
        reason,
        raw: last_raw,
    });
    Ok(None)
}

fn request(system: &str, few_shot: Vec<FewShotTurn>, user: String, cfg: &ExtractionConfig) -> ChatRequest {
    ChatRequest {
        system: system.to_owned(),
        few_shot,
        user,
        temperature: cfg.temperature,
        max_tokens: cfg.max_tokens,
    }
}

/// Step one: subject-verb-object triplets for one message.
///
/// Keys not starting with the message role, empty verbs or objects, and
/// duplicates (case-insensitive, whitespace-normalized) are dropped.
pub fn extract_triplets(
    conv: &ConversationRecord,
    msg_index: usize,
    cfg: &ExtractionConfig,
    backend: &dyn ChatBackend,
    warnings: &mut Vec<ExtractionWarning>,
) -> Result<Vec<Triplet>, ExtractionError> {
    let context = build_context_window(conv, msg_index, cfg.context_window_k)?;
    let message = &conv.messages()[msg_index];
    let vars = PromptVars {
        role: &message.role,
        context: &context,
        message: &message.text,
        info_list: "",
    };
    let req = request(
        &prompt::fill_template(prompt::TRIPLET_SYSTEM, &vars),
        prompt::triplet_few_shot(),
        prompt::fill_template(prompt::TRIPLET_USER, &vars),
        cfg,
    );
    let call = Call {
        conv,
        msg_index,
        stage: ExtractionStage::Triplets,
    };
    let Some(pairs) = ask_with_retries(&call, &req, cfg, backend, warnings, |raw| {
        payload_pairs(raw, TRIPLET_KEY)
    })?
    else {
        return Ok(Vec::new());
    };

    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (key, value) in pairs {
        let Some(verb) = split_role_key(&key, &message.role) else {
            continue;
        };
        for object in value_texts(&value) {
            let object = normalize_whitespace(&object);
            if object.is_empty() || !seen.insert(dedup_key(&[&verb, &object])) {
                continue;
            }
            out.push(Triplet {
                subject: message.role.clone(),
                verb: verb.clone(),
                object,
            });
        }
    }
    Ok(out)
}

/// Step two: attaches a prepositional adjunct to each triplet.
///
/// Always returns one quadruplet per input triplet; a triplet missing from
/// the response, or answered with "no information", keeps an absent adjunct.
pub fn augment_adjuncts(
    conv: &ConversationRecord,
    msg_index: usize,
    triplets: &[Triplet],
    cfg: &ExtractionConfig,
    backend: &dyn ChatBackend,
    warnings: &mut Vec<ExtractionWarning>,
) -> Result<Vec<SvoaQuadruplet>, ExtractionError> {
    let bare = |t: &Triplet| SvoaQuadruplet::new(&t.subject, &t.verb, &t.object, None, msg_index);
    if triplets.is_empty() {
        return Ok(Vec::new());
    }
    let context = build_context_window(conv, msg_index, cfg.context_window_k)?;
    let message = &conv.messages()[msg_index];
    let info_list = triplets.iter().map(Triplet::key).collect::<Vec<_>>().join("\n");
    let vars = PromptVars {
        role: &message.role,
        context: &context,
        message: &message.text,
        info_list: &info_list,
    };
    let req = request(
        &prompt::fill_template(prompt::ADJUNCT_SYSTEM, &vars),
        prompt::adjunct_few_shot(),
        prompt::fill_template(prompt::ADJUNCT_USER, &vars),
        cfg,
    );
    let call = Call {
        conv,
        msg_index,
        stage: ExtractionStage::Adjuncts,
    };
    let Some(pairs) = ask_with_retries(&call, &req, cfg, backend, warnings, |raw| {
        payload_pairs(raw, ADJUNCT_KEY)
    })?
    else {
        return Ok(triplets.iter().map(bare).collect());
    };

    let details: Vec<(String, Option<String>)> = pairs
        .into_iter()
        .map(|(k, v)| (k, value_texts(&v).into_iter().next()))
        .collect();
    let lookup = |key: &str| -> Option<String> {
        let exact = details.iter().find(|(k, _)| k == key);
        let loose = || {
            let want = dedup_key(&[key]);
            details.iter().find(|(k, _)| dedup_key(&[k]) == want)
        };
        exact
            .or_else(loose)
            .and_then(|(_, d)| d.as_deref())
            .and_then(normalize_adjunct)
    };

    Ok(triplets
        .iter()
        .map(|t| SvoaQuadruplet::new(&t.subject, &t.verb, &t.object, lookup(&t.key()), msg_index))
        .collect())
}

/// Single-call extraction of complete quadruplets (ablation baseline).
///
/// Distinct phrasings of the same fact are all kept; only exact duplicates
/// after normalization are removed.
pub fn extract_single_step(
    conv: &ConversationRecord,
    msg_index: usize,
    cfg: &ExtractionConfig,
    backend: &dyn ChatBackend,
    warnings: &mut Vec<ExtractionWarning>,
) -> Result<Vec<SvoaQuadruplet>, ExtractionError> {
    let context = build_context_window(conv, msg_index, cfg.context_window_k)?;
    let message = &conv.messages()[msg_index];
    let vars = PromptVars {
        role: &message.role,
        context: &context,
        message: &message.text,
        info_list: "",
    };
    let req = request(
        &prompt::fill_template(prompt::SINGLE_STEP_SYSTEM, &vars),
        prompt::single_step_few_shot(),
        prompt::fill_template(prompt::SINGLE_STEP_USER, &vars),
        cfg,
    );
    let call = Call {
        conv,
        msg_index,
        stage: ExtractionStage::SingleStep,
    };
    let Some(pairs) = ask_with_retries(&call, &req, cfg, backend, warnings, |raw| {
        payload_pairs(raw, QUADRUPLET_KEY)
    })?
    else {
        return Ok(Vec::new());
    };

    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (key, value) in pairs {
        let Some(verb) = split_role_key(&key, &message.role) else {
            continue;
        };
        let (objects, detail) = match &value {
            serde_json::Value::Object(fields) => (
                fields.get("target").map(value_texts).unwrap_or_default(),
                fields.get("detail").and_then(|d| value_texts(d).into_iter().next()),
            ),
            other => (value_texts(other), None),
        };
        let adjunct = detail.as_deref().and_then(normalize_adjunct);
        for object in objects {
            let object = normalize_whitespace(&object);
            let tuple_key = dedup_key(&[&verb, &object, adjunct.as_deref().unwrap_or("")]);
            if object.is_empty() || !seen.insert(tuple_key) {
                continue;
            }
            out.push(SvoaQuadruplet::new(
                &message.role,
                &verb,
                object,
                adjunct.clone(),
                msg_index,
            ));
        }
    }
    Ok(out)
}

/// Quadruplets for one message under `cfg.mode`.
pub fn extract_message(
    conv: &ConversationRecord,
    msg_index: usize,
    cfg: &ExtractionConfig,
    backend: &dyn ChatBackend,
    warnings: &mut Vec<ExtractionWarning>,
) -> Result<Vec<SvoaQuadruplet>, ExtractionError> {
    match cfg.mode {
        ExtractionMode::TwoStep => {
            let triplets = extract_triplets(conv, msg_index, cfg, backend, warnings)?;
            augment_adjuncts(conv, msg_index, &triplets, cfg, backend, warnings)
        }
        ExtractionMode::SingleStep => extract_single_step(conv, msg_index, cfg, backend, warnings),
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConversationExtraction {
    /// Quadruplets in message order, then response order.
    pub quadruplets: Vec<SvoaQuadruplet>,
    pub warnings: Vec<ExtractionWarning>,
}

/// Extracts every message of a conversation. Messages run concurrently and
/// are merged by message index.
pub fn extract_conversation(
    conv: &ConversationRecord,
    cfg: &ExtractionConfig,
    backend: &dyn ChatBackend,
) -> Result<ConversationExtraction, ExtractionError> {
    let per_message: Vec<_> = (0..conv.len())
        .into_par_iter()
        .map(|i| {
            let mut warnings = Vec::new();
            extract_message(conv, i, cfg, backend, &mut warnings).map(|q| (q, warnings))
        })
        .collect::<Result<_, _>>()?;
    let mut out = ConversationExtraction::default();
    for (quads, warnings) in per_message {
        out.quadruplets.extend(quads);
        out.warnings.extend(warnings);
    }
    Ok(out)
}
