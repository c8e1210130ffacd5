use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::vector::EmbeddingVector;

#[derive(Debug, Error)]
pub enum CacheError {
    #[error("cache file {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cache file {path}, line {line}: {reason}")]
    Corrupt { path: PathBuf, line: usize, reason: String },
}

/// One line of the append-only cache file.
#[derive(Debug, Serialize, Deserialize)]
struct CacheRecord {
    model_id: String,
    text_hash: String,
    text: String,
    vector: EmbeddingVector,
}

pub fn text_hash(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

/// `(model_id, text) -> vector` map, optionally mirrored to an append-only
/// JSON-lines file. Safe for concurrent lookups and inserts.
#[derive(Default)]
pub struct EmbeddingCache {
    entries: RwLock<HashMap<(String, String), EmbeddingVector>>,
    sink: Option<(PathBuf, Mutex<BufWriter<File>>)>,
}

impl std::fmt::Debug for EmbeddingCache {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EmbeddingCache")
            .field("len", &self.len())
            .field("path", &self.sink.as_ref().map(|(p, _)| p))
            .finish()
    }
}

impl EmbeddingCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens (or creates) a persistent cache. A partial last line left by an
    /// interrupted write is ignored; any other malformed line is an error.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, CacheError> {
        let path = path.as_ref().to_path_buf();
        let io_err = |source| CacheError::Io {
            path: path.clone(),
            source,
        };
        let mut entries = HashMap::new();
        if path.exists() {
            let content = std::fs::read(&path).map_err(io_err)?;
            let ends_cleanly = content.last().is_none_or(|b| *b == b'\n');
            let lines: Vec<_> = BufReader::new(content.as_slice())
                .lines()
                .collect::<Result<_, _>>()
                .map_err(io_err)?;
            let last = lines.len();
            for (i, line) in lines.iter().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let parsed = serde_json::from_str::<CacheRecord>(line);
                let record = match parsed {
                    Ok(r) => r,
                    Err(_) if i + 1 == last && !ends_cleanly => break,
                    Err(e) => {
                        return Err(CacheError::Corrupt {
                            path: path.clone(),
                            line: i + 1,
                            reason: e.to_string(),
                        })
                    }
                };
                if text_hash(&record.text) != record.text_hash {
                    return Err(CacheError::Corrupt {
                        path: path.clone(),
                        line: i + 1,
                        reason: "text hash does not match text".into(),
                    });
                }
                entries.insert((record.model_id, record.text), record.vector);
            }
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(io_err)?;
        Ok(Self {
            entries: RwLock::new(entries),
            sink: Some((path, Mutex::new(BufWriter::new(file)))),
        })
    }

    pub fn get(&self, model_id: &str, text: &str) -> Option<EmbeddingVector> {
        let entries = self.entries.read().expect("cache lock poisoned");
        entries.get(&(model_id.to_owned(), text.to_owned())).cloned()
    }

    pub fn insert(&self, model_id: &str, text: &str, vector: EmbeddingVector) -> Result<(), CacheError> {
        if let Some((path, sink)) = &self.sink {
            let record = CacheRecord {
                model_id: model_id.to_owned(),
                text_hash: text_hash(text),
                text: text.to_owned(),
                vector: vector.clone(),
            };
            let mut line = serde_json::to_string(&record).expect("cache record serializes");
            line.push('\n');
            let mut w = sink.lock().expect("cache sink poisoned");
            w.write_all(line.as_bytes())
                .and_then(|()| w.flush())
                .map_err(|source| CacheError::Io {
                    path: path.clone(),
                    source,
                })?;
        }
        self.entries
            .write()
            .expect("cache lock poisoned")
            .insert((model_id.to_owned(), text.to_owned()), vector);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("cache lock poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
