//! Immutable knowledge-graph triple store.
//!
//! Loads (head, relation, tail) triples from TSV or headered CSV, assigns
//! dense ids in first-seen order, and indexes every triple both forward
//! and reverse per relation. The graph never mutates after load, so it is
//! safe to share across any number of reader threads.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Dense entity index, assigned in first-seen order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EntityId(pub u32);

/// Dense relation index, assigned in first-seen order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RelationId(pub u32);

/// A named vertex. The surface form is preserved exactly as loaded;
/// uniqueness is only enforced on the canonicalized form.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entity {
    pub id: EntityId,
    pub name: String,
    pub category: Option<String>,
}

/// A named edge label. Relations are directed as stored.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Relation {
    pub id: RelationId,
    pub name: String,
}

/// Traversal direction for [`KnowledgeGraph::neighbors`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Reverse,
}

/// Input layout for [`load_triples`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum KgFormat {
    /// One triple per line, `head<TAB>relation<TAB>tail`, no header.
    TsvHrt,
    /// CSV with a header row; the three column names are given by config.
    CsvWithHeader {
        head: String,
        relation: String,
        tail: String,
    },
}

#[derive(Debug, Error)]
pub enum KgError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: expected 3 tab-separated columns, found {found}")]
    BadColumnCount { line: usize, found: usize },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("csv header is missing column {0:?}")]
    MissingColumn(String),
    #[error("line {line}: empty {field} name")]
    EmptyName { line: usize, field: &'static str },
    #[error("entity name collision: {a:?} and {b:?} both canonicalize to {canonical:?}")]
    NameCollision { a: String, b: String, canonical: String },
    #[error("name map line {line}: expected `id<TAB>name[<TAB>category]`")]
    BadNameMapLine { line: usize },
    #[error("invalid entity id {0:?}")]
    InvalidEntity(EntityId),
    #[error("invalid relation id {0:?}")]
    InvalidRelation(RelationId),
    #[error("unknown entity name {0:?}")]
    UnknownEntityName(String),
    #[error("unknown relation name {0:?}")]
    UnknownRelationName(String),
}

/// Canonical form used only for uniqueness checks: trimmed and case-folded.
/// The stored surface form is untouched.
pub fn canonicalize(name: &str) -> String {
    name.trim().to_lowercase()
}

/// Counts plus a per-relation triple histogram.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KgStats {
    pub entities: usize,
    pub relations: usize,
    pub triples: usize,
    /// (relation name, number of triples carrying it), in relation-id order.
    pub per_relation: Vec<(String, usize)>,
}

static EMPTY_NEIGHBORS: BTreeSet<EntityId> = BTreeSet::new();

/// Immutable entity/relation store with forward and reverse adjacency
/// indices per relation.
#[derive(Debug, Clone)]
pub struct KnowledgeGraph {
    entities: Vec<Entity>,
    relations: Vec<Relation>,
    triples: Vec<(EntityId, RelationId, EntityId)>,
    forward: HashMap<(EntityId, RelationId), BTreeSet<EntityId>>,
    reverse: HashMap<(EntityId, RelationId), BTreeSet<EntityId>>,
    entity_by_name: HashMap<String, EntityId>,
    relation_by_name: HashMap<String, RelationId>,
}

impl KnowledgeGraph {
    /// Build a graph from named triples. Duplicate triples are dropped;
    /// ids are assigned in first-seen order (head before tail per triple).
    pub fn from_named_triples<I, S>(rows: I) -> Result<Self, KgError>
    where
        I: IntoIterator<Item = (S, S, S)>,
        S: AsRef<str>,
    {
        let mut b = Builder::default();
        for (line, (h, r, t)) in rows.into_iter().enumerate() {
            b.add(line + 1, h.as_ref(), r.as_ref(), t.as_ref())?;
        }
        Ok(b.finish())
    }

    pub fn entity_count(&self) -> usize {
        self.entities.len()
    }

    pub fn relation_count(&self) -> usize {
        self.relations.len()
    }

    pub fn triple_count(&self) -> usize {
        self.triples.len()
    }

    pub fn entities(&self) -> &[Entity] {
        &self.entities
    }

    pub fn relations(&self) -> &[Relation] {
        &self.relations
    }

    /// Deduplicated triples in first-occurrence order.
    pub fn triples(&self) -> &[(EntityId, RelationId, EntityId)] {
        &self.triples
    }

    pub fn entity(&self, id: EntityId) -> Result<&Entity, KgError> {
        self.entities
            .get(id.0 as usize)
            .ok_or(KgError::InvalidEntity(id))
    }

    pub fn relation(&self, id: RelationId) -> Result<&Relation, KgError> {
        self.relations
            .get(id.0 as usize)
            .ok_or(KgError::InvalidRelation(id))
    }

    /// Look up an entity by its exact surface form.
    pub fn entity_id(&self, name: &str) -> Result<EntityId, KgError> {
        self.entity_by_name
            .get(name)
            .copied()
            .ok_or_else(|| KgError::UnknownEntityName(name.to_string()))
    }

    /// Look up a relation by its exact name.
    pub fn relation_id(&self, name: &str) -> Result<RelationId, KgError> {
        self.relation_by_name
            .get(name)
            .copied()
            .ok_or_else(|| KgError::UnknownRelationName(name.to_string()))
    }

    /// All tails `t` with `(entity, relation, t)` stored (forward), or all
    /// heads `h` with `(h, relation, entity)` stored (reverse).
    pub fn neighbors(
        &self,
        entity: EntityId,
        relation: RelationId,
        direction: Direction,
    ) -> Result<&BTreeSet<EntityId>, KgError> {
        self.entity(entity)?;
        self.relation(relation)?;
        let index = match direction {
            Direction::Forward => &self.forward,
            Direction::Reverse => &self.reverse,
        };
        Ok(index.get(&(entity, relation)).unwrap_or(&EMPTY_NEIGHBORS))
    }

    /// All incoming edges of `v` as `(head, relation)` pairs, sorted by
    /// relation id then head id. Used by the reverse sampler.
    pub fn incoming_edges(&self, v: EntityId) -> Result<Vec<(EntityId, RelationId)>, KgError> {
        self.entity(v)?;
        let mut out = Vec::new();
        for rel in &self.relations {
            for &head in self.neighbors(v, rel.id, Direction::Reverse)? {
                out.push((head, rel.id));
            }
        }
        out.sort_by_key(|&(h, r)| (r, h));
        Ok(out)
    }

    pub fn stats(&self) -> KgStats {
        let mut per_relation: Vec<(String, usize)> = self
            .relations
            .iter()
            .map(|r| (r.name.clone(), 0usize))
            .collect();
        for &(_, r, _) in &self.triples {
            per_relation[r.0 as usize].1 += 1;
        }
        KgStats {
            entities: self.entities.len(),
            relations: self.relations.len(),
            triples: self.triples.len(),
            per_relation,
        }
    }
}

#[derive(Default)]
struct Builder {
    entities: Vec<Entity>,
    relations: Vec<Relation>,
    triples: Vec<(EntityId, RelationId, EntityId)>,
    seen: HashSet<(EntityId, RelationId, EntityId)>,
    entity_by_name: HashMap<String, EntityId>,
    relation_by_name: HashMap<String, RelationId>,
    canonical: HashMap<String, String>,
    categories: HashMap<String, String>,
}

impl Builder {
    fn intern_entity(&mut self, line: usize, name: &str) -> Result<EntityId, KgError> {
        if name.trim().is_empty() {
            return Err(KgError::EmptyName { line, field: "entity" });
        }
        if let Some(&id) = self.entity_by_name.get(name) {
            return Ok(id);
        }
        let canonical = canonicalize(name);
        if let Some(prev) = self.canonical.get(&canonical) {
            return Err(KgError::NameCollision {
                a: prev.clone(),
                b: name.to_string(),
                canonical,
            });
        }
        let id = EntityId(self.entities.len() as u32);
        self.canonical.insert(canonical, name.to_string());
        self.entity_by_name.insert(name.to_string(), id);
        self.entities.push(Entity {
            id,
            name: name.to_string(),
            category: self.categories.get(name).cloned(),
        });
        Ok(id)
    }

    fn intern_relation(&mut self, line: usize, name: &str) -> Result<RelationId, KgError> {
        if name.trim().is_empty() {
            return Err(KgError::EmptyName { line, field: "relation" });
        }
        if let Some(&id) = self.relation_by_name.get(name) {
            return Ok(id);
        }
        let id = RelationId(self.relations.len() as u32);
        self.relation_by_name.insert(name.to_string(), id);
        self.relations.push(Relation { id, name: name.to_string() });
        Ok(id)
    }

    fn add(&mut self, line: usize, head: &str, rel: &str, tail: &str) -> Result<(), KgError> {
        let h = self.intern_entity(line, head)?;
        let r = self.intern_relation(line, rel)?;
        let t = self.intern_entity(line, tail)?;
        if self.seen.insert((h, r, t)) {
            self.triples.push((h, r, t));
        }
        Ok(())
    }

    fn finish(self) -> KnowledgeGraph {
        let mut forward: HashMap<(EntityId, RelationId), BTreeSet<EntityId>> = HashMap::new();
        let mut reverse: HashMap<(EntityId, RelationId), BTreeSet<EntityId>> = HashMap::new();
        for &(h, r, t) in &self.triples {
            forward.entry((h, r)).or_default().insert(t);
            reverse.entry((t, r)).or_default().insert(h);
        }
        KnowledgeGraph {
            entities: self.entities,
            relations: self.relations,
            triples: self.triples,
            forward,
            reverse,
            entity_by_name: self.entity_by_name,
            relation_by_name: self.relation_by_name,
        }
    }
}

/// Optional surface-name substitution applied before interning, for graphs
/// whose triple files carry machine-coded ids (the FB15k-237 convention).
/// Rows are `id<TAB>name` with an optional third `category` column; ids
/// absent from the map pass through unchanged.
#[derive(Debug, Default, Clone)]
pub struct NameMap {
    names: BTreeMap<String, String>,
    categories: HashMap<String, String>,
}

impl NameMap {
    pub fn load(path: &Path) -> Result<Self, KgError> {
        let text = std::fs::read_to_string(path).map_err(|source| KgError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut map = NameMap::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim_end_matches('\r');
            if line.is_empty() {
                continue;
            }
            let mut parts = line.splitn(3, '\t');
            let id = parts.next().unwrap_or("");
            let name = parts
                .next()
                .ok_or(KgError::BadNameMapLine { line: i + 1 })?;
            if id.is_empty() || name.is_empty() {
                return Err(KgError::BadNameMapLine { line: i + 1 });
            }
            if let Some(cat) = parts.next() {
                if !cat.is_empty() {
                    map.categories.insert(name.to_string(), cat.to_string());
                }
            }
            map.names.insert(id.to_string(), name.to_string());
        }
        Ok(map)
    }

    fn apply<'a>(&'a self, raw: &'a str) -> &'a str {
        self.names.get(raw).map(String::as_str).unwrap_or(raw)
    }
}

/// Load and index a triple file. Duplicate triples are deduplicated and
/// index contents do not depend on line order.
pub fn load_triples(
    path: &Path,
    format: &KgFormat,
    name_map: Option<&NameMap>,
) -> Result<KnowledgeGraph, KgError> {
    let text = std::fs::read_to_string(path).map_err(|source| KgError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut b = Builder::default();
    if let Some(map) = name_map {
        b.categories = map.categories.clone();
    }
    match format {
        KgFormat::TsvHrt => {
            for (i, raw) in text.lines().enumerate() {
                let line = raw.trim_end_matches('\r');
                if line.is_empty() {
                    continue;
                }
                let cols: Vec<&str> = line.split('\t').collect();
                if cols.len() != 3 {
                    return Err(KgError::BadColumnCount { line: i + 1, found: cols.len() });
                }
                let (h, r, t) = match name_map {
                    Some(m) => (m.apply(cols[0]), cols[1], m.apply(cols[2])),
                    None => (cols[0], cols[1], cols[2]),
                };
                b.add(i + 1, h, r, t)?;
            }
        }
        KgFormat::CsvWithHeader { head, relation, tail } => {
            let mut reader = csv::Reader::from_reader(text.as_bytes());
            let headers = reader.headers()?.clone();
            let col = |name: &str| -> Result<usize, KgError> {
                headers
                    .iter()
                    .position(|h| h == name)
                    .ok_or_else(|| KgError::MissingColumn(name.to_string()))
            };
            let (hi, ri, ti) = (col(head)?, col(relation)?, col(tail)?);
            for (i, record) in reader.records().enumerate() {
                let record = record?;
                let get = |idx: usize| record.get(idx).unwrap_or("");
                let (h, r, t) = match name_map {
                    Some(m) => (
                        m.apply(get(hi)).to_string(),
                        get(ri).to_string(),
                        m.apply(get(ti)).to_string(),
                    ),
                    None => (get(hi).to_string(), get(ri).to_string(), get(ti).to_string()),
                };
                // +2: header row plus 1-based numbering.
                b.add(i + 2, &h, &r, &t)?;
            }
        }
    }
    Ok(b.finish())
}
