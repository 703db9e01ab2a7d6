//! Grounded-query evaluation.
//!
//! A [`GroundedQuery`] is a formula whose anchor slots and projection
//! slots have been bound to concrete entities and relations, both in
//! pre-order. [`answer`] evaluates it bottom-up over the graph's
//! adjacency indices. [`naive_answer`] recomputes the same set from the
//! raw triple list with per-entity membership tables, sharing no
//! traversal code with `answer`; the two must always agree.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::formula::Formula;
use crate::kg::{Direction, EntityId, KgError, KnowledgeGraph, RelationId};

/// A formula bound to concrete anchors and relations. `anchors` holds one
/// entity per `e` leaf and `relations` one relation per `p` node, both in
/// pre-order (parent before child, left before right).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroundedQuery {
    pub formula: Formula,
    pub anchors: Vec<EntityId>,
    pub relations: Vec<RelationId>,
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("formula has {want} {slot} slots, {found} bindings provided")]
    BindingMismatch {
        slot: &'static str,
        want: usize,
        found: usize,
    },
    #[error("negation outside an intersection cannot be evaluated")]
    StrayNegation,
    #[error("an intersection of two complements cannot be evaluated")]
    BothOperandsNegated,
    #[error("graph has {entities} entities, exceeding the oracle cap of {cap}")]
    EntityCapExceeded { entities: usize, cap: usize },
    #[error(transparent)]
    Kg(#[from] KgError),
}

/// Ceiling on graph size for the membership-table oracle, which allocates
/// one boolean per entity per node.
pub const DEFAULT_ORACLE_CAP: usize = 10_000;

/// Formula with bindings attached to the nodes that consume them.
/// Constructing one revalidates negation placement, so queries built by
/// hand get the same structural guarantees as parsed ones.
enum Bound {
    Anchor(EntityId),
    Projection(RelationId, Box<Bound>),
    Intersection(Box<Bound>, Box<Bound>),
    Union(Box<Bound>, Box<Bound>),
    Negation(Box<Bound>),
}

impl Bound {
    fn bind(q: &GroundedQuery) -> Result<Bound, EngineError> {
        let want_anchors = q.formula.anchor_count();
        if q.anchors.len() != want_anchors {
            return Err(EngineError::BindingMismatch {
                slot: "anchor",
                want: want_anchors,
                found: q.anchors.len(),
            });
        }
        let want_relations = q.formula.projection_count();
        if q.relations.len() != want_relations {
            return Err(EngineError::BindingMismatch {
                slot: "relation",
                want: want_relations,
                found: q.relations.len(),
            });
        }
        let mut anchors = q.anchors.iter().copied();
        let mut relations = q.relations.iter().copied();
        Self::bind_node(&q.formula, &mut anchors, &mut relations, false)
    }

    fn bind_node(
        f: &Formula,
        anchors: &mut impl Iterator<Item = EntityId>,
        relations: &mut impl Iterator<Item = RelationId>,
        under_intersection: bool,
    ) -> Result<Bound, EngineError> {
        match f {
            Formula::Entity => Ok(Bound::Anchor(anchors.next().expect("anchor count checked"))),
            Formula::Projection(c) => {
                let r = relations.next().expect("relation count checked");
                let child = Self::bind_node(c, anchors, relations, false)?;
                Ok(Bound::Projection(r, Box::new(child)))
            }
            Formula::Intersection(a, b) => {
                if matches!(**a, Formula::Negation(_)) && matches!(**b, Formula::Negation(_)) {
                    return Err(EngineError::BothOperandsNegated);
                }
                let a = Self::bind_node(a, anchors, relations, true)?;
                let b = Self::bind_node(b, anchors, relations, true)?;
                Ok(Bound::Intersection(Box::new(a), Box::new(b)))
            }
            Formula::Union(a, b) => {
                let a = Self::bind_node(a, anchors, relations, false)?;
                let b = Self::bind_node(b, anchors, relations, false)?;
                Ok(Bound::Union(Box::new(a), Box::new(b)))
            }
            Formula::Negation(c) => {
                if !under_intersection {
                    return Err(EngineError::StrayNegation);
                }
                let child = Self::bind_node(c, anchors, relations, false)?;
                Ok(Bound::Negation(Box::new(child)))
            }
        }
    }
}

/// Evaluate a grounded query to its answer set, in ascending entity id
/// order. Set semantics throughout: an intersection with a complemented
/// operand is evaluated as a set difference against the positive operand.
pub fn answer(kg: &KnowledgeGraph, q: &GroundedQuery) -> Result<BTreeSet<EntityId>, EngineError> {
    let bound = Bound::bind(q)?;
    eval(kg, &bound)
}

fn eval(kg: &KnowledgeGraph, node: &Bound) -> Result<BTreeSet<EntityId>, EngineError> {
    match node {
        Bound::Anchor(a) => {
            kg.entity(*a)?;
            Ok(BTreeSet::from([*a]))
        }
        Bound::Projection(r, c) => {
            let base = eval(kg, c)?;
            let mut out = BTreeSet::new();
            for h in base {
                out.extend(kg.neighbors(h, *r, Direction::Forward)?);
            }
            Ok(out)
        }
        Bound::Intersection(a, b) => match (a.as_ref(), b.as_ref()) {
            (Bound::Negation(neg), pos) | (pos, Bound::Negation(neg)) => {
                let positive = eval(kg, pos)?;
                let negated = eval(kg, neg)?;
                Ok(positive.difference(&negated).copied().collect())
            }
            (a, b) => {
                let left = eval(kg, a)?;
                let right = eval(kg, b)?;
                Ok(left.intersection(&right).copied().collect())
            }
        },
        Bound::Union(a, b) => {
            let mut left = eval(kg, a)?;
            left.extend(eval(kg, b)?);
            Ok(left)
        }
        Bound::Negation(_) => Err(EngineError::StrayNegation),
    }
}

/// Recompute an answer set without the adjacency indices: every node
/// produces a membership table over all entities, and each projection
/// rescans the raw triple list. Slower by design; exists to cross-check
/// [`answer`]. Errors when the graph exceeds `cap` entities.
pub fn naive_answer(
    kg: &KnowledgeGraph,
    q: &GroundedQuery,
    cap: usize,
) -> Result<BTreeSet<EntityId>, EngineError> {
    let entities = kg.entity_count();
    if entities > cap {
        return Err(EngineError::EntityCapExceeded { entities, cap });
    }
    let bound = Bound::bind(q)?;
    let table = naive_eval(kg, &bound)?;
    Ok(table
        .iter()
        .enumerate()
        .filter(|&(_, &member)| member)
        .map(|(i, _)| EntityId(i as u32))
        .collect())
}

fn naive_eval(kg: &KnowledgeGraph, node: &Bound) -> Result<Vec<bool>, EngineError> {
    let n = kg.entity_count();
    match node {
        Bound::Anchor(a) => {
            kg.entity(*a)?;
            let mut table = vec![false; n];
            table[a.0 as usize] = true;
            Ok(table)
        }
        Bound::Projection(r, c) => {
            kg.relation(*r)?;
            let base = naive_eval(kg, c)?;
            let mut table = vec![false; n];
            for &(h, rel, t) in kg.triples() {
                if rel == *r && base[h.0 as usize] {
                    table[t.0 as usize] = true;
                }
            }
            Ok(table)
        }
        Bound::Intersection(a, b) => match (a.as_ref(), b.as_ref()) {
            (Bound::Negation(neg), pos) | (pos, Bound::Negation(neg)) => {
                let positive = naive_eval(kg, pos)?;
                let negated = naive_eval(kg, neg)?;
                Ok(positive
                    .iter()
                    .zip(&negated)
                    .map(|(&p, &q)| p && !q)
                    .collect())
            }
            (a, b) => {
                let left = naive_eval(kg, a)?;
                let right = naive_eval(kg, b)?;
                Ok(left.iter().zip(&right).map(|(&p, &q)| p && q).collect())
            }
        },
        Bound::Union(a, b) => {
            let left = naive_eval(kg, a)?;
            let right = naive_eval(kg, b)?;
            Ok(left.iter().zip(&right).map(|(&p, &q)| p || q).collect())
        }
        Bound::Negation(_) => Err(EngineError::StrayNegation),
    }
}
