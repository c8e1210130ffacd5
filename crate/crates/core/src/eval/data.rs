//! Corpus and query files: one JSON object per line.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::ConversationRecord;

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}, line {line}: {reason}")]
    Line { path: String, line: usize, reason: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub query_id: String,
    pub text: String,
    pub relevant_conv_ids: Vec<String>,
}

impl QueryRecord {
    pub fn relevant_set(&self) -> HashSet<&str> {
        self.relevant_conv_ids.iter().map(String::as_str).collect()
    }
}

fn read_records<T, F>(path: &Path, mut check: F) -> Result<Vec<T>, LoadError>
where
    T: for<'de> Deserialize<'de>,
    F: FnMut(&T) -> Result<(), String>,
{
    let path_str = path.display().to_string();
    let file = File::open(path).map_err(|source| LoadError::Io {
        path: path_str.clone(),
        source,
    })?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| LoadError::Io {
            path: path_str.clone(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |reason: String| LoadError::Line {
            path: path_str.clone(),
            line: i + 1,
            reason,
        };
        let record: T = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
        check(&record).map_err(bad)?;
        out.push(record);
    }
    Ok(out)
}

/// Loads `{conv_id, messages: [{role, text}]}` lines.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<ConversationRecord>, LoadError> {
    let mut seen = HashSet::new();
    read_records(path.as_ref(), |c: &ConversationRecord| {
        if seen.insert(c.conv_id().to_owned()) {
            Ok(())
        } else {
            Err(format!("duplicate conv_id {:?}", c.conv_id()))
        }
    })
}

/// Loads `{query_id, text, relevant_conv_ids}` lines. When `known` is given,
/// every relevant id must be in it.
pub fn load_queries(path: impl AsRef<Path>, known: Option<&HashSet<&str>>) -> Result<Vec<QueryRecord>, LoadError> {
    let mut seen = HashSet::new();
    read_records(path.as_ref(), |q: &QueryRecord| {
        if q.query_id.trim().is_empty() {
            return Err("empty query_id".into());
        }
        if !seen.insert(q.query_id.clone()) {
            return Err(format!("duplicate query_id {:?}", q.query_id));
        }
        if q.text.trim().is_empty() {
            return Err(format!("query {:?} has empty text", q.query_id));
        }
        if q.relevant_conv_ids.is_empty() {
            return Err(format!("query {:?} has no relevant conversations", q.query_id));
        }
        if let Some(known) = known {
            if let Some(missing) = q.relevant_conv_ids.iter().find(|id| !known.contains(id.as_str())) {
                return Err(format!("query {:?} references unknown conv_id {missing:?}", q.query_id));
            }
        }
        Ok(())
    })
}

fn write_lines<T: Serialize>(path: &Path, items: &[T]) -> std::io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn write_corpus(path: impl AsRef<Path>, corpus: &[ConversationRecord]) -> std::io::Result<()> {
    write_lines(path.as_ref(), corpus)
}

pub fn write_queries(path: impl AsRef<Path>, queries: &[QueryRecord]) -> std::io::Result<()> {
    write_lines(path.as_ref(), queries)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_line_corpus() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.jsonl");
        std::fs::write(&p, r#"{"conv_id":"c1","messages":[{"role":"user","text":"hi"}]}"#).unwrap();
        let c = load_corpus(&p).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].messages()[0].text, "hi");
    }

    #[test]
    fn corpus_errors_carry_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.jsonl");
        let line = r#"{"conv_id":"c1","messages":[{"role":"user","text":"hi"}]}"#;
        std::fs::write(&p, format!("{line}\n\n{line}\n")).unwrap();
        match load_corpus(&p) {
            Err(LoadError::Line { line: 3, reason, .. }) => assert!(reason.contains("duplicate")),
            other => panic!("unexpected {other:?}"),
        }
        std::fs::write(&p, r#"{"conv_id":"c1","messages":[]}"#).unwrap();
        assert!(matches!(load_corpus(&p), Err(LoadError::Line { line: 1, .. })));
    }

    #[test]
    fn unknown_relevant_id_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("q.jsonl");
        std::fs::write(&p, r#"{"query_id":"q1","text":"x","relevant_conv_ids":["c9"]}"#).unwrap();
        let known: HashSet<&str> = ["c1"].into_iter().collect();
        let err = load_queries(&p, Some(&known)).unwrap_err().to_string();
        assert!(err.contains("c9"), "{err}");
        assert_eq!(load_queries(&p, None).unwrap().len(), 1);
    }

    #[test]
    fn empty_relevant_set_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("q.jsonl");
        std::fs::write(&p, r#"{"query_id":"q1","text":"x","relevant_conv_ids":[]}"#).unwrap();
        assert!(load_queries(&p, None).is_err());
    }
}
