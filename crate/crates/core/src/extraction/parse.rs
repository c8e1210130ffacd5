//! Lenient JSON recovery for chat-completion responses.
//!
//! Backends wrap JSON in markdown fences or surround it with prose; the
//! recovery order is: whole text, fenced block, first balanced `{...}`.

use serde_json::{Map, Value};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PayloadError {
    #[error("empty response")]
    Empty,
    #[error("no JSON object found in response")]
    NoJson,
    #[error("payload key {0:?} missing")]
    MissingKey(String),
    #[error("payload under {0:?} is not an array")]
    NotAnArray(String),
}

/// Strips a surrounding markdown code fence (```` ``` ```` or ```` ```json ````).
pub fn strip_code_fences(text: &str) -> &str {
    let trimmed = text.trim();
    let Some(start) = trimmed.find("```") else {
        return trimmed;
    };
    let after_ticks = &trimmed[start + 3..];
    // Skip the info string (e.g. "json") up to the end of the fence line.
    let body_start = after_ticks.find('\n').map(|i| i + 1).unwrap_or(0);
    let body = &after_ticks[body_start..];
    match body.find("```") {
        Some(end) => body[..end].trim(),
        None => body.trim(),
    }
}

/// Returns the first balanced `{...}` span, respecting JSON string escapes.
fn first_balanced_object(text: &str) -> Option<&str> {
    let bytes = text.as_bytes();
    let mut search_from = 0;
    while let Some(rel) = text[search_from..].find('{') {
        let start = search_from + rel;
        let mut depth = 0usize;
        let mut in_string = false;
        let mut escaped = false;
        for (i, &b) in bytes.iter().enumerate().skip(start) {
            if in_string {
                match (escaped, b) {
                    (true, _) => escaped = false,
                    (false, b'\\') => escaped = true,
                    (false, b'"') => in_string = false,
                    _ => {}
                }
                continue;
            }
            match b {
                b'"' => in_string = true,
                b'{' => depth += 1,
                b'}' => {
                    depth -= 1;
                    if depth == 0 {
                        let candidate = &text[start..=i];
                        if serde_json::from_str::<Value>(candidate).is_ok() {
                            return Some(candidate);
                        }
                        break;
                    }
                }
                _ => {}
            }
        }
        search_from = start + 1;
    }
    None
}

/// Recovers the first JSON object embedded in `text`.
pub fn extract_json_object(text: &str) -> Result<Map<String, Value>, PayloadError> {
    if text.trim().is_empty() {
        return Err(PayloadError::Empty);
    }
    let candidates = [text.trim(), strip_code_fences(text)];
    for candidate in candidates {
        if let Ok(Value::Object(map)) = serde_json::from_str::<Value>(candidate) {
            return Ok(map);
        }
    }
    for candidate in candidates {
        if let Some(span) = first_balanced_object(candidate) {
            if let Ok(Value::Object(map)) = serde_json::from_str::<Value>(span) {
                return Ok(map);
            }
        }
    }
    Err(PayloadError::NoJson)
}

/// Flattens the array stored under `key` into `(key, value)` pairs, one per
/// entry of each element object. Non-object elements are ignored.
pub fn payload_pairs(text: &str, key: &str) -> Result<Vec<(String, Value)>, PayloadError> {
    let map = extract_json_object(text)?;
    let payload = match map.get(key) {
        Some(v) => v,
        None => map
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(key))
            .map(|(_, v)| v)
            .ok_or_else(|| PayloadError::MissingKey(key.to_owned()))?,
    };
    let Value::Array(items) = payload else {
        return Err(PayloadError::NotAnArray(key.to_owned()));
    };
    Ok(items
        .iter()
        .filter_map(Value::as_object)
        .flat_map(|obj| obj.iter().map(|(k, v)| (k.clone(), v.clone())))
        .collect())
}

/// Text values of a payload entry: a string, each string of an array, or a
/// scalar's display form.
pub fn value_texts(value: &Value) -> Vec<String> {
    match value {
        Value::String(s) => vec![s.clone()],
        Value::Array(items) => items.iter().flat_map(value_texts).collect(),
        Value::Number(n) => vec![n.to_string()],
        Value::Bool(b) => vec![b.to_string()],
        Value::Null | Value::Object(_) => Vec::new(),
    }
}
