//! Demonstration retrieval by embedding similarity.
//!
//! A pool holds candidate questions with their embedding vectors; for a
//! target question, `select` ranks candidates by cosine similarity and
//! returns the top, bottom, or a uniformly random k. The embedding
//! backend is pluggable; a deterministic character-trigram hash embedder
//! ships for fully offline runs, since selection depends only on cosine
//! geometry and not on any particular encoder.

use std::path::Path;

use rand::Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::gateway::Demonstration;
use crate::scalar::Real;

/// Text-to-vector backend. Implementations must be deterministic: the
/// same text always embeds to the same vector.
pub trait EmbeddingProvider<T> {
    /// Stable identifier; cache entries and pools are keyed by it.
    fn id(&self) -> String;
    fn dimension(&self) -> usize;
    fn embed(&self, text: &str) -> Result<Vec<T>, DemoError>;
}

/// A candidate demonstration before embedding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PoolQuestion {
    pub question: String,
    pub answers: Vec<String>,
    pub rationale: Option<String>,
    /// Pattern label carried through to the embedding export.
    pub pattern: String,
    /// Answer-category label carried through to the embedding export.
    pub category: String,
}

/// One embedded pool entry.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolEntry<T> {
    pub source: PoolQuestion,
    pub vector: Vec<T>,
    norm: T,
}

/// Immutable candidate pool; build once, select many times.
#[derive(Debug, Clone, PartialEq)]
pub struct DemoPool<T> {
    pub provider_id: String,
    pub dimension: usize,
    entries: Vec<PoolEntry<T>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectionStrategy {
    Highest,
    Random,
    Lowest,
}

impl SelectionStrategy {
    pub fn parse(s: &str) -> Option<SelectionStrategy> {
        match s {
            "highest" => Some(SelectionStrategy::Highest),
            "random" => Some(SelectionStrategy::Random),
            "lowest" => Some(SelectionStrategy::Lowest),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SelectionStrategy::Highest => "highest",
            SelectionStrategy::Random => "random",
            SelectionStrategy::Lowest => "lowest",
        }
    }
}

#[derive(Debug, Error)]
pub enum DemoError {
    #[error("provider {provider} returned a {got}-dimensional vector, expected {want}")]
    WrongDimension {
        provider: String,
        want: usize,
        got: usize,
    },
    #[error("demonstration pool is empty")]
    EmptyPool,
    #[error("requested {k} demonstrations but only {available} candidates remain")]
    TooFewCandidates { k: usize, available: usize },
    #[error("pool was built with provider {pool:?} but selection used {provider:?}")]
    ProviderMismatch { pool: String, provider: String },
    #[error("{} pool questions failed to embed (first: index {}, {})",
            failures.len(), failures[0].0, failures[0].1)]
    PartialPool { failures: Vec<(usize, String)> },
    #[error("embedding provider: {0}")]
    Provider(String),
    #[error("cannot access {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// Cosine similarity; zero whenever either vector has zero norm.
pub fn cosine<T: Real>(a: &[T], b: &[T]) -> T {
    let mut dot = T::zero();
    let mut norm_a = T::zero();
    let mut norm_b = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        dot = dot + x * y;
        norm_a = norm_a + x * x;
        norm_b = norm_b + y * y;
    }
    if norm_a == T::zero() || norm_b == T::zero() {
        return T::zero();
    }
    dot / (norm_a.sqrt() * norm_b.sqrt())
}

fn l2_norm<T: Real>(v: &[T]) -> T {
    v.iter().fold(T::zero(), |acc, &x| acc + x * x).sqrt()
}

/// Embed every question, reading vectors from `cache_dir` when present
/// and writing fresh ones back. Cache files are keyed by provider id and
/// the SHA-256 of the question text, so a warm cache costs zero provider
/// calls. Provider failures are collected, not fail-fast.
pub fn build_pool<T: Real>(
    questions: &[PoolQuestion],
    provider: &dyn EmbeddingProvider<T>,
    cache_dir: Option<&Path>,
) -> Result<DemoPool<T>, DemoError> {
    let mut entries = Vec::with_capacity(questions.len());
    let mut failures = Vec::new();
    for (index, q) in questions.iter().enumerate() {
        let vector = match embed_cached(provider, &q.question, cache_dir) {
            Ok(v) => v,
            Err(e) => {
                failures.push((index, e.to_string()));
                continue;
            }
        };
        if vector.len() != provider.dimension() {
            return Err(DemoError::WrongDimension {
                provider: provider.id(),
                want: provider.dimension(),
                got: vector.len(),
            });
        }
        let norm = l2_norm(&vector);
        entries.push(PoolEntry { source: q.clone(), vector, norm });
    }
    if !failures.is_empty() {
        return Err(DemoError::PartialPool { failures });
    }
    Ok(DemoPool {
        provider_id: provider.id(),
        dimension: provider.dimension(),
        entries,
    })
}

fn cache_path(cache_dir: &Path, provider_id: &str, text: &str) -> std::path::PathBuf {
    let mut hasher = Sha256::new();
    hasher.update(text.as_bytes());
    let digest = hasher.finalize();
    let mut name = String::with_capacity(64);
    for byte in digest {
        name.push_str(&format!("{byte:02x}"));
    }
    cache_dir.join(provider_id).join(format!("{name}.json"))
}

fn embed_cached<T: Real>(
    provider: &dyn EmbeddingProvider<T>,
    text: &str,
    cache_dir: Option<&Path>,
) -> Result<Vec<T>, DemoError> {
    let path = cache_dir.map(|dir| cache_path(dir, &provider.id(), text));
    if let Some(path) = &path {
        if let Ok(raw) = std::fs::read_to_string(path) {
            if let Ok(values) = serde_json::from_str::<Vec<f64>>(&raw) {
                return Ok(values
                    .into_iter()
                    .map(|v| T::from_f64(v).expect("cached component fits scalar"))
                    .collect());
            }
        }
    }
    let vector = provider.embed(text)?;
    if let Some(path) = &path {
        let parent = path.parent().expect("cache path has a directory");
        std::fs::create_dir_all(parent).map_err(|source| DemoError::Io {
            path: parent.display().to_string(),
            source,
        })?;
        let as_f64: Vec<f64> = vector.iter().map(|v| v.to_f64().unwrap()).collect();
        std::fs::write(path, serde_json::to_string(&as_f64).expect("vector serializes"))
            .map_err(|source| DemoError::Io { path: path.display().to_string(), source })?;
    }
    Ok(vector)
}

impl<T: Real> DemoPool<T> {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[PoolEntry<T>] {
        &self.entries
    }

    /// Candidate indices with their cosine similarity to `target`,
    /// excluding entries whose question text equals `exclude_text`.
    fn similarities(&self, target: &[T], exclude_text: &str) -> Vec<(usize, T)> {
        let target_norm = l2_norm(target);
        self.entries
            .iter()
            .enumerate()
            .filter(|(_, e)| e.source.question != exclude_text)
            .map(|(i, e)| {
                let sim = if e.norm == T::zero() || target_norm == T::zero() {
                    T::zero()
                } else {
                    let dot = e
                        .vector
                        .iter()
                        .zip(target)
                        .fold(T::zero(), |acc, (&x, &y)| acc + x * y);
                    dot / (e.norm * target_norm)
                };
                (i, sim)
            })
            .collect()
    }
}

/// Pick k demonstrations for the target question. `highest` and
/// `lowest` rank by cosine similarity with ties broken by pool order;
/// `random` draws uniformly without replacement. The target's own text
/// is never a candidate.
pub fn select<T: Real, R: Rng>(
    pool: &DemoPool<T>,
    provider: &dyn EmbeddingProvider<T>,
    target_text: &str,
    k: usize,
    strategy: SelectionStrategy,
    rng: &mut R,
) -> Result<Vec<Demonstration>, DemoError> {
    if pool.is_empty() {
        return Err(DemoError::EmptyPool);
    }
    if provider.id() != pool.provider_id {
        return Err(DemoError::ProviderMismatch {
            pool: pool.provider_id.clone(),
            provider: provider.id(),
        });
    }
    let target = provider.embed(target_text)?;
    if target.len() != pool.dimension {
        return Err(DemoError::WrongDimension {
            provider: provider.id(),
            want: pool.dimension,
            got: target.len(),
        });
    }
    let mut candidates = pool.similarities(&target, target_text);
    if candidates.len() < k {
        return Err(DemoError::TooFewCandidates { k, available: candidates.len() });
    }
    let chosen: Vec<usize> = match strategy {
        SelectionStrategy::Highest => {
            candidates.sort_by(|a, b| {
                b.1.partial_cmp(&a.1).expect("similarities are finite").then(a.0.cmp(&b.0))
            });
            candidates[..k].iter().map(|&(i, _)| i).collect()
        }
        SelectionStrategy::Lowest => {
            candidates.sort_by(|a, b| {
                a.1.partial_cmp(&b.1).expect("similarities are finite").then(a.0.cmp(&b.0))
            });
            candidates[..k].iter().map(|&(i, _)| i).collect()
        }
        SelectionStrategy::Random => {
            // Partial Fisher-Yates over the candidate list.
            let mut indices: Vec<usize> = candidates.iter().map(|&(i, _)| i).collect();
            let mut chosen = Vec::with_capacity(k);
            for _ in 0..k {
                let at = rng.gen_range(0..indices.len() as u64) as usize;
                chosen.push(indices.swap_remove(at));
            }
            chosen
        }
    };
    Ok(chosen
        .into_iter()
        .map(|i| {
            let source = &pool.entries[i].source;
            Demonstration {
                question: source.question.clone(),
                answers: source.answers.clone(),
                rationale: source.rationale.clone(),
            }
        })
        .collect())
}

/// Write the pool's vectors as CSV: one row per entry with id, pattern,
/// category, then the vector components.
pub fn export_embeddings<T: Real>(pool: &DemoPool<T>, path: &Path) -> Result<(), DemoError> {
    let file = std::fs::File::create(path).map_err(|source| DemoError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut writer = csv::Writer::from_writer(file);
    let mut header = vec!["id".to_string(), "pattern".to_string(), "category".to_string()];
    header.extend((0..pool.dimension).map(|i| format!("d{i}")));
    writer.write_record(&header)?;
    for (i, entry) in pool.entries.iter().enumerate() {
        let mut row = vec![
            i.to_string(),
            entry.source.pattern.clone(),
            entry.source.category.clone(),
        ];
        row.extend(entry.vector.iter().map(|v| {
            let v = v.to_f64().unwrap();
            format!("{v:.12}")
        }));
        writer.write_record(&row)?;
    }
    writer.flush().map_err(|source| DemoError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(())
}

/// Offline deterministic embedder: character trigrams of the normalized
/// text are hashed into a fixed number of signed buckets and the result
/// is L2-normalized. Similar wording lands in similar buckets, which is
/// all cosine selection needs.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    pub dimension: usize,
}

impl Default for HashEmbedder {
    fn default() -> Self {
        HashEmbedder { dimension: 64 }
    }
}

impl<T: Real> EmbeddingProvider<T> for HashEmbedder {
    fn id(&self) -> String {
        format!("trigram-hash-{}", self.dimension)
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, text: &str) -> Result<Vec<T>, DemoError> {
        let normalized: Vec<char> = format!("  {}  ", text.to_lowercase()).chars().collect();
        let mut buckets = vec![0f64; self.dimension];
        for window in normalized.windows(3) {
            let mut hash: u64 = 0xcbf29ce484222325;
            for &c in window {
                for byte in (c as u32).to_le_bytes() {
                    hash ^= u64::from(byte);
                    hash = hash.wrapping_mul(0x100000001b3);
                }
            }
            let bucket = (hash % self.dimension as u64) as usize;
            let sign = if (hash >> 63) == 0 { 1.0 } else { -1.0 };
            buckets[bucket] += sign;
        }
        let norm = buckets.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            for v in &mut buckets {
                *v /= norm;
            }
        }
        Ok(buckets
            .into_iter()
            .map(|v| T::from_f64(v).expect("normalized component fits scalar"))
            .collect())
    }
}
