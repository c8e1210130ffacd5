//! Line-delimited JSON index files.
//!
//! Line 1 is the [`Manifest`]. Each conversation then contributes one
//! conversation record (messages, quadruplets, warnings and the number of
//! instance records that follow) and its instance records, conversation
//! instance first.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{IndexEntry, IndexError, IndexedQuadruplet, Manifest, SemanticIndexStore, FORMAT_VERSION};
use crate::extraction::ExtractionWarning;
use crate::types::{ComponentInstance, ComponentKind, ConversationRecord, QuadrupletRef, Turn};
use crate::vector::EmbeddingVector;

#[derive(Serialize, Deserialize)]
struct ConversationLine {
    conv_id: String,
    messages: Vec<Turn>,
    quadruplets: Vec<IndexedQuadruplet>,
    #[serde(default)]
    warnings: Vec<ExtractionWarning>,
    instance_count: usize,
}

#[derive(Serialize)]
struct InstanceLineRef<'a> {
    conv_id: &'a str,
    kind: ComponentKind,
    text: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    source_message_index: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    quadruplet_ref: Option<&'a QuadrupletRef>,
    vector: &'a [f64],
}

#[derive(Deserialize)]
struct InstanceLine {
    conv_id: String,
    kind: ComponentKind,
    text: String,
    #[serde(default)]
    source_message_index: Option<usize>,
    #[serde(default)]
    quadruplet_ref: Option<QuadrupletRef>,
    vector: Vec<f64>,
}

fn io_error(path: &Path, source: std::io::Error) -> IndexError {
    IndexError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn write_json_line<W: Write, T: Serialize>(w: &mut W, value: &T) -> std::io::Result<()> {
    serde_json::to_writer(&mut *w, value)?;
    w.write_all(b"\n")
}

fn write_entry<W: Write>(w: &mut W, entry: &IndexEntry) -> std::io::Result<()> {
    let instances: Vec<&ComponentInstance> = entry.all_instances().collect();
    write_json_line(
        w,
        &ConversationLine {
            conv_id: entry.conv_id().to_owned(),
            messages: entry
                .conversation
                .messages()
                .iter()
                .map(|m| Turn::new(m.role.clone(), m.text.clone()))
                .collect(),
            quadruplets: entry.quadruplets.clone(),
            warnings: entry.warnings.clone(),
            instance_count: instances.len(),
        },
    )?;
    for inst in instances {
        write_json_line(
            w,
            &InstanceLineRef {
                conv_id: entry.conv_id(),
                kind: inst.kind,
                text: &inst.text,
                source_message_index: inst.source_message_index,
                quadruplet_ref: inst.quadruplet_ref.as_ref(),
                vector: inst.embedding.values(),
            },
        )?;
    }
    Ok(())
}

/// Appends entries to an index file one conversation at a time, flushing
/// after each so an interrupted run leaves every finished entry readable.
pub struct IndexWriter {
    path: PathBuf,
    out: BufWriter<File>,
}

impl IndexWriter {
    /// Creates (truncating) `path` and writes the manifest line.
    pub fn create(path: impl AsRef<Path>, manifest: &Manifest) -> Result<Self, IndexError> {
        let path = path.as_ref().to_path_buf();
        let file = File::create(&path).map_err(|e| io_error(&path, e))?;
        let mut out = BufWriter::new(file);
        write_json_line(&mut out, manifest)
            .and_then(|()| out.flush())
            .map_err(|e| io_error(&path, e))?;
        Ok(Self { path, out })
    }

    pub fn append(&mut self, entry: &IndexEntry) -> Result<(), IndexError> {
        write_entry(&mut self.out, entry)
            .and_then(|()| self.out.flush())
            .map_err(|e| io_error(&self.path, e))
    }

    pub fn finish(mut self) -> Result<(), IndexError> {
        self.out.flush().map_err(|e| io_error(&self.path, e))?;
        self.out.get_ref().sync_all().map_err(|e| io_error(&self.path, e))
    }
}

/// Writes the whole store, entries in `conv_id` order. The file is written
/// next to `path` and renamed into place.
pub fn persist(store: &SemanticIndexStore, path: impl AsRef<Path>) -> Result<(), IndexError> {
    let path = path.as_ref();
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    let mut writer = IndexWriter::create(&tmp, store.manifest())?;
    for entry in store.entries() {
        writer.append(entry)?;
    }
    writer.finish()?;
    std::fs::rename(&tmp, path).map_err(|e| io_error(path, e))
}

/// An entry being reassembled from its records.
struct Partial {
    line: usize,
    conversation: ConversationRecord,
    quadruplets: Vec<IndexedQuadruplet>,
    warnings: Vec<ExtractionWarning>,
    expected: usize,
    instances: Vec<ComponentInstance>,
}

impl Partial {
    fn finish(self, store: &mut SemanticIndexStore) -> Result<(), IndexError> {
        let record_error = |reason: String| IndexError::Record {
            line: self.line,
            reason,
        };
        if self.instances.len() != self.expected {
            return Err(record_error(format!(
                "conversation {} declares {} instance records, found {}",
                self.conversation.conv_id(),
                self.expected,
                self.instances.len()
            )));
        }
        let mut instances = self.instances.into_iter();
        let conversation_instance = match instances.next() {
            Some(i) if i.kind == ComponentKind::Conversation => i,
            _ => {
                return Err(record_error(format!(
                    "conversation {} has no conversation instance",
                    self.conversation.conv_id()
                )))
            }
        };
        let mut entry = IndexEntry {
            conversation: self.conversation,
            conversation_instance,
            messages: Vec::new(),
            sv: Vec::new(),
            svo: Vec::new(),
            svoa: Vec::new(),
            quadruplets: self.quadruplets,
            warnings: self.warnings,
        };
        for inst in instances {
            if inst.kind == ComponentKind::Conversation {
                return Err(record_error(format!(
                    "conversation {} has more than one conversation instance",
                    entry.conv_id()
                )));
            }
            entry.instances_mut(inst.kind).push(inst);
        }
        store.insert(entry).map_err(|e| record_error(e.to_string()))
    }
}

fn parse_manifest(line: &str) -> Result<Manifest, IndexError> {
    let value: Value = serde_json::from_str(line).map_err(|e| IndexError::Record {
        line: 1,
        reason: format!("manifest is not JSON: {e}"),
    })?;
    if let Some(found) = value.get("format_version").and_then(Value::as_u64) {
        if found != u64::from(FORMAT_VERSION) {
            return Err(IndexError::UnsupportedVersion {
                found: found as u32,
                expected: FORMAT_VERSION,
            });
        }
    }
    let manifest: Manifest = serde_json::from_value(value).map_err(|e| IndexError::Manifest(e.to_string()))?;
    if manifest.dimension == 0 {
        return Err(IndexError::Manifest("dimension must be positive".into()));
    }
    Ok(manifest)
}

/// Applies one record to the load state.
fn apply_record(
    line_no: usize,
    line: &str,
    dimension: usize,
    current: &mut Option<Partial>,
    store: &mut SemanticIndexStore,
) -> Result<(), IndexError> {
    let record_error = |reason: String| IndexError::Record { line: line_no, reason };
    let value: Value = serde_json::from_str(line).map_err(|e| record_error(format!("invalid JSON: {e}")))?;
    if value.get("kind").is_some() {
        let rec: InstanceLine =
            serde_json::from_value(value).map_err(|e| record_error(format!("invalid instance record: {e}")))?;
        let partial = current
            .as_mut()
            .filter(|p| p.conversation.conv_id() == rec.conv_id)
            .ok_or_else(|| record_error(format!("instance record for {} outside its conversation", rec.conv_id)))?;
        if rec.vector.len() != dimension {
            return Err(record_error(format!(
                "vector has dimension {}, manifest declares {dimension}",
                rec.vector.len()
            )));
        }
        if partial.instances.len() == partial.expected {
            return Err(record_error(format!(
                "more instance records than the {} declared for {}",
                partial.expected, rec.conv_id
            )));
        }
        let inst = ComponentInstance {
            kind: rec.kind,
            text: rec.text,
            embedding: EmbeddingVector::new(rec.vector),
            source_message_index: rec.source_message_index,
            quadruplet_ref: rec.quadruplet_ref,
        };
        if !inst.is_well_formed() {
            return Err(record_error(format!("malformed {} instance", inst.kind)));
        }
        partial.instances.push(inst);
    } else {
        let rec: ConversationLine =
            serde_json::from_value(value).map_err(|e| record_error(format!("invalid conversation record: {e}")))?;
        if let Some(done) = current.take() {
            done.finish(store)?;
        }
        let conversation =
            ConversationRecord::from_turns(rec.conv_id, rec.messages).map_err(|e| record_error(e.to_string()))?;
        *current = Some(Partial {
            line: line_no,
            conversation,
            quadruplets: rec.quadruplets,
            warnings: rec.warnings,
            expected: rec.instance_count,
            instances: Vec::with_capacity(rec.instance_count),
        });
    }
    Ok(())
}

fn open_lines(path: &Path) -> Result<impl Iterator<Item = Result<String, IndexError>> + '_, IndexError> {
    let file = File::open(path).map_err(|e| io_error(path, e))?;
    Ok(BufReader::new(file)
        .lines()
        .map(move |l| l.map_err(|e| io_error(path, e))))
}

/// Loads an index file, failing on the first bad record.
pub fn load(path: impl AsRef<Path>) -> Result<SemanticIndexStore, IndexError> {
    let path = path.as_ref();
    let mut lines = open_lines(path)?;
    let first = lines
        .next()
        .transpose()?
        .ok_or_else(|| IndexError::Manifest("file is empty".into()))?;
    let manifest = parse_manifest(&first)?;
    let dimension = manifest.dimension;
    let mut store = SemanticIndexStore::new(manifest);
    let mut current = None;
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        apply_record(i + 2, &line, dimension, &mut current, &mut store)?;
    }
    if let Some(done) = current {
        done.finish(&mut store)?;
    }
    Ok(store)
}

/// Result of [`load_lenient`].
#[derive(Debug)]
pub struct LenientLoad {
    pub store: SemanticIndexStore,
    /// The first error encountered; everything from the conversation it
    /// belongs to onwards was discarded.
    pub discarded: Option<IndexError>,
}

/// Loads every complete conversation of a possibly interrupted file. Used to
/// resume ingestion; the manifest itself must still be valid.
pub fn load_lenient(path: impl AsRef<Path>) -> Result<LenientLoad, IndexError> {
    let path = path.as_ref();
    let mut lines = open_lines(path)?;
    let first = lines
        .next()
        .transpose()?
        .ok_or_else(|| IndexError::Manifest("file is empty".into()))?;
    let manifest = parse_manifest(&first)?;
    let dimension = manifest.dimension;
    let mut store = SemanticIndexStore::new(manifest);
    let mut current = None;
    for (i, line) in lines.enumerate() {
        let line = match line {
            Ok(l) => l,
            Err(e) => {
                return Ok(LenientLoad {
                    store,
                    discarded: Some(e),
                })
            }
        };
        if line.trim().is_empty() {
            continue;
        }
        if let Err(e) = apply_record(i + 2, &line, dimension, &mut current, &mut store) {
            return Ok(LenientLoad {
                store,
                discarded: Some(e),
            });
        }
    }
    let discarded = current.and_then(|done| done.finish(&mut store).err());
    Ok(LenientLoad { store, discarded })
}
