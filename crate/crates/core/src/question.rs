//! Natural-language rendering of grounded queries.
//!
//! Each relation carries a hand-written template sentence with `[HEAD]`
//! and `[TAIL]` placeholders. Verbalization walks the query tree in
//! post-order, introducing a numbered entity set (`v1`, `v2`, ...) at
//! every sentence-producing node, and closes with an ask-sentence naming
//! the root set. A complemented operand does not get its own sentence:
//! its parent intersection emits a single difference sentence instead,
//! matching how the engine evaluates it.

use std::collections::HashMap;
use std::path::Path;

use thiserror::Error;

use crate::engine::{self, EngineError, GroundedQuery};
use crate::formula::{Family, Formula};
use crate::kg::{EntityId, KgError, KnowledgeGraph, RelationId};

/// Sentence pattern for one relation. `[HEAD]` receives the source
/// entity (or set) and `[TAIL]` the fresh result-set label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelationTemplate {
    pub relation: String,
    pub tail_category: String,
    pub template: String,
}

/// Templates keyed by relation name. Duplicate rows in the source file
/// resolve last-wins; each overwrite is recorded as a warning.
#[derive(Debug, Clone, Default)]
pub struct TemplateSet {
    by_relation: HashMap<String, RelationTemplate>,
    warnings: Vec<String>,
}

#[derive(Debug, Error)]
pub enum QuestionError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("template line {line}: expected 3 tab-separated fields, found {found}")]
    BadRow { line: usize, found: usize },
    #[error("template line {line}: template must contain {placeholder} exactly once")]
    BadPlaceholder { line: usize, placeholder: &'static str },
    #[error("no template for relation {relation:?}")]
    MissingTemplate { relation: String },
    #[error("cannot verbalize {0}")]
    UnsupportedShape(String),
    #[error("root operator is not an intersection or union of plain branches")]
    NotDecomposable,
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Kg(#[from] KgError),
}

impl TemplateSet {
    pub fn load(path: &Path) -> Result<TemplateSet, QuestionError> {
        let text = std::fs::read_to_string(path).map_err(|source| QuestionError::Io {
            path: path.display().to_string(),
            source,
        })?;
        TemplateSet::parse(&text)
    }

    /// Parse `relation<TAB>tail-category<TAB>template` rows. Blank lines
    /// and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<TemplateSet, QuestionError> {
        let mut set = TemplateSet::default();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(QuestionError::BadRow { line: line_no, found: fields.len() });
            }
            let template = fields[2];
            for placeholder in ["[HEAD]", "[TAIL]"] {
                if template.matches(placeholder).count() != 1 {
                    return Err(QuestionError::BadPlaceholder { line: line_no, placeholder });
                }
            }
            let row = RelationTemplate {
                relation: fields[0].to_string(),
                tail_category: fields[1].to_string(),
                template: template.to_string(),
            };
            if set.by_relation.insert(row.relation.clone(), row).is_some() {
                set.warnings.push(format!(
                    "line {line_no}: duplicate template for relation {:?} replaces the earlier one",
                    fields[0]
                ));
            }
        }
        Ok(set)
    }

    pub fn get(&self, relation: &str) -> Result<&RelationTemplate, QuestionError> {
        self.by_relation
            .get(relation)
            .ok_or_else(|| QuestionError::MissingTemplate { relation: relation.to_string() })
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn len(&self) -> usize {
        self.by_relation.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_relation.is_empty()
    }
}

/// A fully rendered question with its source query and gold answers.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedQuestion {
    pub text: String,
    pub query: GroundedQuery,
    /// Gold answer names in ascending entity-id order.
    pub gold: Vec<String>,
    /// The `vN` the ask-sentence requests entities from.
    pub result_set_index: usize,
    pub family: Family,
    pub depth: usize,
    pub variety: usize,
}

/// Render a grounded query into question text, computing its gold answer
/// set along the way. Deterministic: same query and templates, same text.
pub fn verbalize(
    kg: &KnowledgeGraph,
    query: &GroundedQuery,
    templates: &TemplateSet,
) -> Result<GeneratedQuestion, QuestionError> {
    let mut ctx = Verbalizer {
        kg,
        templates,
        sentences: Vec::new(),
        next_index: 0,
        anchors: query.anchors.iter().copied(),
        relations: query.relations.iter().copied(),
    };
    let root = match ctx.node(&query.formula)? {
        Operand::Set(index) => index,
        Operand::Anchor(_) => {
            return Err(QuestionError::UnsupportedShape(
                "a bare anchor entity is not a question".to_string(),
            ))
        }
    };
    let mut text = ctx.sentences.join(" ");
    text.push_str(&format!(" Please name 10 entities from v{root}."));
    let gold_ids = engine::answer(kg, query)?;
    let gold = gold_ids
        .iter()
        .map(|&id| Ok(kg.entity(id)?.name.clone()))
        .collect::<Result<Vec<_>, QuestionError>>()?;
    Ok(GeneratedQuestion {
        text,
        query: query.clone(),
        gold,
        result_set_index: root,
        family: query.formula.family(),
        depth: query.formula.depth(),
        variety: query.formula.variety(),
    })
}

/// What a subtree contributes to its parent's sentence: a concrete anchor
/// name or an already-introduced set index.
enum Operand {
    Anchor(String),
    Set(usize),
}

struct Verbalizer<'a, A, R>
where
    A: Iterator<Item = EntityId>,
    R: Iterator<Item = RelationId>,
{
    kg: &'a KnowledgeGraph,
    templates: &'a TemplateSet,
    sentences: Vec<String>,
    next_index: usize,
    anchors: A,
    relations: R,
}

impl<A, R> Verbalizer<'_, A, R>
where
    A: Iterator<Item = EntityId>,
    R: Iterator<Item = RelationId>,
{
    fn fresh_index(&mut self) -> usize {
        self.next_index += 1;
        self.next_index
    }

    fn node(&mut self, f: &Formula) -> Result<Operand, QuestionError> {
        match f {
            Formula::Entity => {
                let id = self.anchors.next().ok_or_else(|| {
                    QuestionError::UnsupportedShape("anchor binding missing".to_string())
                })?;
                Ok(Operand::Anchor(self.kg.entity(id)?.name.clone()))
            }
            Formula::Projection(child) => {
                let relation_id = self.relations.next().ok_or_else(|| {
                    QuestionError::UnsupportedShape("relation binding missing".to_string())
                })?;
                let relation = self.kg.relation(relation_id)?.name.clone();
                let operand = self.node(child)?;
                let head = match operand {
                    Operand::Anchor(name) => name,
                    Operand::Set(index) => format!("the entity set v{index}"),
                };
                let index = self.fresh_index();
                let template = self.templates.get(&relation)?;
                let sentence = template
                    .template
                    .replace("[TAIL]", &format!("v{index}"))
                    .replace("[HEAD]", &head);
                self.sentences.push(sentence);
                Ok(Operand::Set(index))
            }
            Formula::Intersection(a, b) => {
                match (negated(a), negated(b)) {
                    (None, None) => self.binary("intersection", a, b),
                    // The complemented side contributes a set; its parent
                    // emits the one difference sentence for the pair.
                    (Some(neg), None) => {
                        let neg_index = self.set_operand(neg)?;
                        let pos_index = self.set_operand(b)?;
                        Ok(Operand::Set(self.difference(pos_index, neg_index)))
                    }
                    (None, Some(neg)) => {
                        let pos_index = self.set_operand(a)?;
                        let neg_index = self.set_operand(neg)?;
                        Ok(Operand::Set(self.difference(pos_index, neg_index)))
                    }
                    (Some(_), Some(_)) => Err(EngineError::BothOperandsNegated.into()),
                }
            }
            Formula::Union(a, b) => self.binary("union", a, b),
            Formula::Negation(_) => Err(EngineError::StrayNegation.into()),
        }
    }

    fn binary(&mut self, op: &str, a: &Formula, b: &Formula) -> Result<Operand, QuestionError> {
        let left = self.set_operand(a)?;
        let right = self.set_operand(b)?;
        let index = self.fresh_index();
        self.sentences
            .push(format!("The {op} of sets v{left} and v{right} is v{index}."));
        Ok(Operand::Set(index))
    }

    fn difference(&mut self, positive: usize, negated: usize) -> usize {
        let index = self.fresh_index();
        self.sentences.push(format!(
            "The entity set v{index} contains the entities in v{positive} that are not in v{negated}."
        ));
        index
    }

    /// Verbalize an operand of a set operation, which must itself denote
    /// a set: a bare anchor has no set index to name.
    fn set_operand(&mut self, f: &Formula) -> Result<usize, QuestionError> {
        match self.node(f)? {
            Operand::Set(index) => Ok(index),
            Operand::Anchor(name) => Err(QuestionError::UnsupportedShape(format!(
                "set operation over the bare anchor {name:?}"
            ))),
        }
    }
}

fn negated(f: &Formula) -> Option<&Formula> {
    match f {
        Formula::Negation(inner) => Some(inner),
        _ => None,
    }
}

/// Split an intersection or union question into its two operand branches
/// as standalone queries. Branch bindings are the contiguous pre-order
/// slices belonging to each subtree.
pub fn decompose_set_op(
    query: &GroundedQuery,
) -> Result<(GroundedQuery, GroundedQuery), QuestionError> {
    let (a, b) = match &query.formula {
        Formula::Intersection(a, b) | Formula::Union(a, b) => (a.as_ref(), b.as_ref()),
        _ => return Err(QuestionError::NotDecomposable),
    };
    if matches!(a, Formula::Negation(_)) || matches!(b, Formula::Negation(_)) {
        return Err(QuestionError::NotDecomposable);
    }
    let split_anchor = a.anchor_count();
    let split_relation = a.projection_count();
    if query.anchors.len() != split_anchor + b.anchor_count()
        || query.relations.len() != split_relation + b.projection_count()
    {
        return Err(QuestionError::UnsupportedShape(
            "binding counts do not match the formula".to_string(),
        ));
    }
    let left = GroundedQuery {
        formula: a.clone(),
        anchors: query.anchors[..split_anchor].to_vec(),
        relations: query.relations[..split_relation].to_vec(),
    };
    let right = GroundedQuery {
        formula: b.clone(),
        anchors: query.anchors[split_anchor..].to_vec(),
        relations: query.relations[split_relation..].to_vec(),
    };
    Ok((left, right))
}
