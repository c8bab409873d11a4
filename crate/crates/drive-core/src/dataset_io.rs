//! JSONL persistence for sample datasets and hard-negative maps.
//!
//! Files start with a schema header line (`{"schema":"drive.dataset",
//! "version":1}`); headerless files matching the record schema are also
//! accepted. Writing is deterministic, so identical inputs produce
//! byte-identical files.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mining::{HnEntry, HnMap};
use crate::triplet::{Phrase, Sample, Triplet, VerbState};

pub const DATASET_SCHEMA: &str = "drive.dataset";
pub const HNMAP_SCHEMA: &str = "drive.hnmap";
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum DatasetIoError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("{path}: schema mismatch: found {found}, expected {expected}")]
    SchemaVersionMismatch {
        path: String,
        found: String,
        expected: String,
    },
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
}

#[derive(Debug, Serialize, Deserialize)]
struct SchemaHeader {
    schema: String,
    version: u32,
}

fn default_true() -> bool {
    true
}

#[allow(clippy::trivially_copy_pass_by_ref)]
fn is_true(b: &bool) -> bool {
    *b
}

#[derive(Debug, Serialize, Deserialize)]
struct SampleRecord {
    id: String,
    raw: String,
    s: String,
    r: String,
    o: String,
    state: VerbState,
    img: Vec<f64>,
    scene_rel: u32,
    obj_count: u32,
    #[serde(default = "default_true", skip_serializing_if = "is_true")]
    bidir: bool,
}

impl From<&Sample> for SampleRecord {
    fn from(s: &Sample) -> Self {
        Self {
            id: s.id.clone(),
            raw: s.raw_caption.clone(),
            s: s.triplet.subject.text.clone(),
            r: s.triplet.relation.text.clone(),
            o: s.triplet.object.text.clone(),
            state: s.state,
            img: s.image_features.clone(),
            scene_rel: s.scene_relation_count,
            obj_count: s.object_count,
            bidir: s.bidirectional_plausible,
        }
    }
}

impl From<SampleRecord> for Sample {
    fn from(r: SampleRecord) -> Self {
        Sample {
            id: r.id,
            raw_caption: r.raw,
            triplet: Triplet::new(Phrase::noun(&r.s), Phrase::verb(&r.r), Phrase::noun(&r.o)),
            state: r.state,
            scene_relation_count: r.scene_rel,
            object_count: r.obj_count,
            image_features: r.img,
            bidirectional_plausible: r.bidir,
        }
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> DatasetIoError + '_ {
    move |source| DatasetIoError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn write_jsonl<T: Serialize>(
    path: &Path,
    schema: &str,
    records: impl Iterator<Item = T>,
) -> Result<(), DatasetIoError> {
    let mut out = String::new();
    out.push_str(
        &serde_json::to_string(&SchemaHeader {
            schema: schema.to_string(),
            version: SCHEMA_VERSION,
        })
        .expect("header serializes"),
    );
    out.push('\n');
    for record in records {
        out.push_str(&serde_json::to_string(&record).expect("record serializes"));
        out.push('\n');
    }
    fs::write(path, out).map_err(io_err(path))
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(
    path: &Path,
    schema: &str,
) -> Result<Vec<T>, DatasetIoError> {
    let display = path.display().to_string();
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut records = Vec::new();
    let mut first_content_line = true;
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        if first_content_line {
            first_content_line = false;
            if let Ok(header) = serde_json::from_str::<SchemaHeader>(line) {
                if header.schema != schema || header.version != SCHEMA_VERSION {
                    return Err(DatasetIoError::SchemaVersionMismatch {
                        path: display,
                        found: format!("{} v{}", header.schema, header.version),
                        expected: format!("{schema} v{SCHEMA_VERSION}"),
                    });
                }
                continue;
            }
            // headerless file: fall through and parse as a record
        }
        let record: T = serde_json::from_str(line).map_err(|e| DatasetIoError::Parse {
            path: display.clone(),
            line: i + 1,
            message: e.to_string(),
        })?;
        records.push(record);
    }
    Ok(records)
}

/// One pre-tagged caption as stored on disk:
/// `{"id", "raw", "tokens": [{"surface","lemma","pos","head","dep"}], ...}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaggedCaptionRecord {
    pub id: String,
    pub raw: String,
    pub tokens: Vec<TaggedTokenRecord>,
    #[serde(default)]
    pub img: Vec<f64>,
    #[serde(default = "default_one")]
    pub scene_rel: u32,
    #[serde(default = "default_one")]
    pub obj_count: u32,
    #[serde(default = "default_true", skip_serializing_if = "is_true")]
    pub bidir: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaggedTokenRecord {
    pub surface: String,
    pub lemma: String,
    pub pos: String,
    pub head: usize,
    pub dep: String,
}

fn default_one() -> u32 {
    1
}

impl TaggedCaptionRecord {
    pub fn tagged_caption(&self) -> Result<crate::triplet::TaggedCaption, DatasetIoError> {
        let tokens = self
            .tokens
            .iter()
            .map(|t| crate::triplet::TaggedToken {
                surface: t.surface.clone(),
                lemma: t.lemma.clone(),
                pos: t.pos.clone(),
                head: t.head,
                dep: t.dep.clone(),
            })
            .collect();
        crate::triplet::TaggedCaption::new(tokens).map_err(|e| DatasetIoError::Invalid {
            path: format!("caption {}", self.id),
            message: e.to_string(),
        })
    }
}

/// Read pre-tagged captions; one JSON object per line, headerless.
pub fn read_tagged_captions(path: &Path) -> Result<Vec<TaggedCaptionRecord>, DatasetIoError> {
    let display = path.display().to_string();
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: TaggedCaptionRecord =
            serde_json::from_str(line).map_err(|e| DatasetIoError::Parse {
                path: display.clone(),
                line: i + 1,
                message: e.to_string(),
            })?;
        records.push(record);
    }
    Ok(records)
}

pub fn write_samples(path: &Path, samples: &[Sample]) -> Result<(), DatasetIoError> {
    write_jsonl(path, DATASET_SCHEMA, samples.iter().map(SampleRecord::from))
}

pub fn read_samples(path: &Path) -> Result<Vec<Sample>, DatasetIoError> {
    Ok(read_jsonl::<SampleRecord>(path, DATASET_SCHEMA)?
        .into_iter()
        .map(Sample::from)
        .collect())
}

pub fn write_hnmap(path: &Path, map: &HnMap) -> Result<(), DatasetIoError> {
    write_jsonl(path, HNMAP_SCHEMA, map.entries().iter().cloned())
}

pub fn read_hnmap(path: &Path) -> Result<HnMap, DatasetIoError> {
    let entries: Vec<HnEntry> = read_jsonl(path, HNMAP_SCHEMA)?;
    Ok(HnMap::from_entries(entries))
}

/// Write a dataset and its hard-negative map side by side.
pub fn write_dataset(
    samples_path: &Path,
    hnmap_path: &Path,
    samples: &[Sample],
    map: &HnMap,
) -> Result<(), DatasetIoError> {
    write_samples(samples_path, samples)?;
    write_hnmap(hnmap_path, map)
}

/// Read a dataset and its hard-negative map, checking that every mapped id
/// resolves and no anchor references itself.
pub fn read_dataset(
    samples_path: &Path,
    hnmap_path: &Path,
) -> Result<(Vec<Sample>, HnMap), DatasetIoError> {
    let samples = read_samples(samples_path)?;
    let map = read_hnmap(hnmap_path)?;
    map.validate(&samples)
        .map_err(|e| DatasetIoError::Invalid {
            path: hnmap_path.display().to_string(),
            message: e.to_string(),
        })?;
    Ok((samples, map))
}
