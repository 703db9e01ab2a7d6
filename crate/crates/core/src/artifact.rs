//! Run artifacts: JSON-lines files with a self-describing first line.
//!
//! Every stage output starts with a [`RunMeta`] header carrying the
//! schema tag, tool version, seed, the SHA-256 of the effective config,
//! and the hashes of the inputs it was derived from. Readers refuse a
//! file whose schema tag does not match what the stage expects, so a
//! questions file can never be fed where samples are required.
//!
//! Records reference entities and relations by surface name, not by
//! dense index: ids depend on graph load order, names survive it.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::engine::GroundedQuery;
use crate::formula::Formula;
use crate::kg::{KgError, KnowledgeGraph};
use crate::question::GeneratedQuestion;
use crate::sampler::SampledQuery;

pub const SAMPLES_SCHEMA: &str = "samples/v1";
pub const QUESTIONS_SCHEMA: &str = "questions/v1";
pub const RECORDS_SCHEMA: &str = "records/v1";

#[derive(Debug, Error)]
pub enum ArtifactError {
    #[error("cannot access {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path} line {line}: {source}")]
    Json {
        path: String,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path} is a {found:?} artifact, expected {want:?}")]
    SchemaMismatch {
        path: String,
        want: String,
        found: String,
    },
    #[error("{path} has no header line")]
    MissingHeader { path: String },
    #[error("{path}: {source}")]
    BadFormula {
        path: String,
        #[source]
        source: crate::formula::FormulaError,
    },
    #[error(transparent)]
    Kg(#[from] KgError),
}

/// Hex SHA-256 of a byte slice.
pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for byte in digest {
        out.push_str(&format!("{byte:02x}"));
    }
    out
}

/// Hex SHA-256 of a file's contents, streamed.
pub fn hash_file(path: &Path) -> Result<String, ArtifactError> {
    let file = File::open(path).map_err(|source| ArtifactError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut reader = BufReader::new(file);
    let mut hasher = Sha256::new();
    let mut buffer = [0u8; 8192];
    loop {
        let n = reader.read(&mut buffer).map_err(|source| ArtifactError::Io {
            path: path.display().to_string(),
            source,
        })?;
        if n == 0 {
            break;
        }
        hasher.update(&buffer[..n]);
    }
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for byte in digest {
        out.push_str(&format!("{byte:02x}"));
    }
    Ok(out)
}

/// Hash of a key-value config. The map is ordered, so two configs with
/// the same pairs hash identically regardless of insertion order.
pub fn config_hash(config: &BTreeMap<String, String>) -> String {
    let mut joined = String::new();
    for (key, value) in config {
        joined.push_str(key);
        joined.push('=');
        joined.push_str(value);
        joined.push('\n');
    }
    sha256_hex(joined.as_bytes())
}

/// First line of every artifact file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunMeta {
    pub schema: String,
    pub tool_version: String,
    pub seed: u64,
    pub config_hash: String,
    /// Input file name to content hash, e.g. the graph and templates.
    pub input_hashes: BTreeMap<String, String>,
    /// Echo of the effective configuration, flattened to strings.
    pub config: BTreeMap<String, String>,
}

impl RunMeta {
    pub fn new(
        schema: &str,
        seed: u64,
        config: BTreeMap<String, String>,
        input_hashes: BTreeMap<String, String>,
    ) -> RunMeta {
        RunMeta {
            schema: schema.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            config_hash: config_hash(&config),
            input_hashes,
            config,
        }
    }
}

/// Streaming line writer; the header goes out at creation time so a
/// crashed run still leaves an identifiable file behind.
pub struct JsonlWriter {
    path: String,
    inner: BufWriter<File>,
}

impl JsonlWriter {
    pub fn create(path: &Path, meta: &RunMeta) -> Result<JsonlWriter, ArtifactError> {
        let file = File::create(path).map_err(|source| ArtifactError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut writer = JsonlWriter {
            path: path.display().to_string(),
            inner: BufWriter::new(file),
        };
        writer.write_line(meta)?;
        Ok(writer)
    }

    /// Reopen an existing artifact for appending. The header must carry
    /// the expected schema; it is returned so the caller can compare
    /// config hashes before resuming.
    pub fn append(path: &Path, want_schema: &str) -> Result<(RunMeta, JsonlWriter), ArtifactError> {
        let meta = read_meta(path, want_schema)?;
        let file = std::fs::OpenOptions::new()
            .append(true)
            .open(path)
            .map_err(|source| ArtifactError::Io {
                path: path.display().to_string(),
                source,
            })?;
        Ok((
            meta,
            JsonlWriter {
                path: path.display().to_string(),
                inner: BufWriter::new(file),
            },
        ))
    }

    pub fn push<T: Serialize>(&mut self, item: &T) -> Result<(), ArtifactError> {
        self.write_line(item)
    }

    fn write_line<T: Serialize>(&mut self, item: &T) -> Result<(), ArtifactError> {
        let line = serde_json::to_string(item).expect("artifact records serialize");
        self.inner
            .write_all(line.as_bytes())
            .and_then(|()| self.inner.write_all(b"\n"))
            .map_err(|source| ArtifactError::Io { path: self.path.clone(), source })
    }

    pub fn finish(mut self) -> Result<(), ArtifactError> {
        self.inner
            .flush()
            .map_err(|source| ArtifactError::Io { path: self.path.clone(), source })
    }
}

/// Write a whole artifact in one call.
pub fn write_artifact<T: Serialize>(
    path: &Path,
    meta: &RunMeta,
    items: &[T],
) -> Result<(), ArtifactError> {
    let mut writer = JsonlWriter::create(path, meta)?;
    for item in items {
        writer.push(item)?;
    }
    writer.finish()
}

/// Read and validate only the header line.
pub fn read_meta(path: &Path, want_schema: &str) -> Result<RunMeta, ArtifactError> {
    let file = File::open(path).map_err(|source| ArtifactError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut reader = BufReader::new(file);
    let mut first = String::new();
    reader.read_line(&mut first).map_err(|source| ArtifactError::Io {
        path: path.display().to_string(),
        source,
    })?;
    if first.trim().is_empty() {
        return Err(ArtifactError::MissingHeader { path: path.display().to_string() });
    }
    let meta: RunMeta =
        serde_json::from_str(first.trim_end()).map_err(|source| ArtifactError::Json {
            path: path.display().to_string(),
            line: 1,
            source,
        })?;
    if meta.schema != want_schema {
        return Err(ArtifactError::SchemaMismatch {
            path: path.display().to_string(),
            want: want_schema.to_string(),
            found: meta.schema,
        });
    }
    Ok(meta)
}

/// Read a full artifact: header plus every record, in file order.
pub fn read_artifact<T: DeserializeOwned>(
    path: &Path,
    want_schema: &str,
) -> Result<(RunMeta, Vec<T>), ArtifactError> {
    let meta = read_meta(path, want_schema)?;
    let file = File::open(path).map_err(|source| ArtifactError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let reader = BufReader::new(file);
    let mut items = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|source| ArtifactError::Io {
            path: path.display().to_string(),
            source,
        })?;
        if i == 0 || line.trim().is_empty() {
            continue;
        }
        let item: T = serde_json::from_str(&line).map_err(|source| ArtifactError::Json {
            path: path.display().to_string(),
            line: i + 1,
            source,
        })?;
        items.push(item);
    }
    Ok((meta, items))
}

/// One sampled query in name form, suitable for a `samples/v1` file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub pattern_index: usize,
    pub formula: String,
    pub seed_entity: String,
    pub anchors: Vec<String>,
    pub relations: Vec<String>,
    pub answers: Vec<String>,
}

impl SampleRecord {
    pub fn from_sample(kg: &KnowledgeGraph, sample: &SampledQuery) -> Result<Self, ArtifactError> {
        Ok(SampleRecord {
            pattern_index: sample.pattern_index,
            formula: sample.query.formula.render(),
            seed_entity: kg.entity(sample.seed_entity)?.name.clone(),
            anchors: entity_names(kg, &sample.query.anchors)?,
            relations: relation_names(kg, &sample.query.relations)?,
            answers: sample
                .answers
                .iter()
                .map(|&id| kg.entity(id).map(|e| e.name.clone()))
                .collect::<Result<_, _>>()?,
        })
    }

    /// Rebind the record against a graph. Fails if any name is unknown,
    /// which catches feeding an artifact to the wrong graph.
    pub fn to_grounded(&self, kg: &KnowledgeGraph) -> Result<GroundedQuery, ArtifactError> {
        Ok(GroundedQuery {
            formula: parse_formula(&self.formula)?,
            anchors: entity_ids(kg, &self.anchors)?,
            relations: relation_ids(kg, &self.relations)?,
        })
    }
}

/// One generated question in name form, for a `questions/v1` file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionRecord {
    pub question_id: String,
    pub pattern_index: usize,
    pub formula: String,
    pub text: String,
    pub gold: Vec<String>,
    pub result_set_index: usize,
    pub family: String,
    pub depth: usize,
    pub variety: usize,
    pub seed_entity: String,
    pub anchors: Vec<String>,
    pub relations: Vec<String>,
}

impl QuestionRecord {
    pub fn from_question(
        kg: &KnowledgeGraph,
        question_id: String,
        pattern_index: usize,
        seed_entity: &str,
        question: &GeneratedQuestion,
    ) -> Result<Self, ArtifactError> {
        Ok(QuestionRecord {
            question_id,
            pattern_index,
            formula: question.query.formula.render(),
            text: question.text.clone(),
            gold: question.gold.clone(),
            result_set_index: question.result_set_index,
            family: question.family.as_str().to_string(),
            depth: question.depth,
            variety: question.variety,
            seed_entity: seed_entity.to_string(),
            anchors: entity_names(kg, &question.query.anchors)?,
            relations: relation_names(kg, &question.query.relations)?,
        })
    }

    pub fn to_grounded(&self, kg: &KnowledgeGraph) -> Result<GroundedQuery, ArtifactError> {
        Ok(GroundedQuery {
            formula: parse_formula(&self.formula)?,
            anchors: entity_ids(kg, &self.anchors)?,
            relations: relation_ids(kg, &self.relations)?,
        })
    }
}

fn parse_formula(text: &str) -> Result<Formula, ArtifactError> {
    Formula::parse(text).map_err(|source| ArtifactError::BadFormula {
        path: text.to_string(),
        source,
    })
}

fn entity_names(
    kg: &KnowledgeGraph,
    ids: &[crate::kg::EntityId],
) -> Result<Vec<String>, ArtifactError> {
    ids.iter().map(|&id| Ok(kg.entity(id)?.name.clone())).collect()
}

fn relation_names(
    kg: &KnowledgeGraph,
    ids: &[crate::kg::RelationId],
) -> Result<Vec<String>, ArtifactError> {
    ids.iter().map(|&id| Ok(kg.relation(id)?.name.clone())).collect()
}

fn entity_ids(
    kg: &KnowledgeGraph,
    names: &[String],
) -> Result<Vec<crate::kg::EntityId>, ArtifactError> {
    names.iter().map(|name| Ok(kg.entity_id(name)?)).collect()
}

fn relation_ids(
    kg: &KnowledgeGraph,
    names: &[String],
) -> Result<Vec<crate::kg::RelationId>, ArtifactError> {
    names.iter().map(|name| Ok(kg.relation_id(name)?)).collect()
}
