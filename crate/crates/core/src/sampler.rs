//! Reverse sampling of grounded queries.
//!
//! A grounding starts from a randomly drawn seed vertex that will be an
//! answer, then walks the pattern tree backwards: each projection picks a
//! uniform incoming edge of its current vertex and recurses on the edge's
//! source, intersections reuse the current vertex for both operands, and
//! unions keep it only for the first operand, drawing a fresh vertex for
//! the second. A complemented operand is grounded from an independently
//! drawn vertex and redrawn until the set difference at its parent
//! intersection is non-empty.
//!
//! Every failed try (dead-end vertex, empty difference, answer-size
//! filter, duplicate) consumes one unit of a per-question retry budget.

use std::collections::{BTreeSet, HashSet};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use thiserror::Error;

use crate::catalog::Catalog;
use crate::engine::{self, EngineError, GroundedQuery};
use crate::formula::Formula;
use crate::kg::{EntityId, KnowledgeGraph, RelationId};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SamplerConfig {
    /// Smallest admissible gold answer set. The ask-sentence requests ten
    /// entities, so the default keeps every question fully answerable.
    pub min_answers: usize,
    /// Largest admissible gold answer set, rejecting trivially broad
    /// queries.
    pub max_answers: usize,
    /// Grounding tries allowed per emitted question before the pattern is
    /// declared short.
    pub max_retries_per_question: usize,
    pub seed: u64,
    pub questions_per_pattern: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            min_answers: 10,
            max_answers: 200,
            max_retries_per_question: 500,
            seed: 0,
            questions_per_pattern: 100,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<(), SamplerError> {
        if self.min_answers < 1 {
            return Err(SamplerError::BadConfig("min_answers must be at least 1".into()));
        }
        if self.min_answers > self.max_answers {
            return Err(SamplerError::BadConfig(format!(
                "min_answers {} exceeds max_answers {}",
                self.min_answers, self.max_answers
            )));
        }
        if self.max_retries_per_question < 1 {
            return Err(SamplerError::BadConfig(
                "max_retries_per_question must be at least 1".into(),
            ));
        }
        if self.questions_per_pattern < 1 {
            return Err(SamplerError::BadConfig(
                "questions_per_pattern must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// One grounded query plus the vertex the grounding grew from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Grounding {
    pub query: GroundedQuery,
    pub seed_entity: EntityId,
}

/// A benchmark entry: a grounding that passed the answer-size filter,
/// with its gold answers materialized.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampledQuery {
    pub pattern_index: usize,
    pub query: GroundedQuery,
    pub seed_entity: EntityId,
    pub answers: BTreeSet<EntityId>,
}

/// Patterns that could not fill their quota, with how far they got.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatternShortfall {
    pub pattern_index: usize,
    pub formula: String,
    pub got: usize,
    pub want: usize,
}

#[derive(Debug, Error)]
pub enum SamplerError {
    #[error("sampler config: {0}")]
    BadConfig(String),
    #[error("graph has no entities")]
    EmptyGraph,
    #[error("pattern {pattern}: retry budget exhausted")]
    RetriesExhausted { pattern: String },
    #[error("{} patterns short of quota (first: pattern {} got {}/{})",
            shortfalls.len(), shortfalls[0].pattern_index, shortfalls[0].got, shortfalls[0].want)]
    Shortfall {
        shortfalls: Vec<PatternShortfall>,
        /// Everything that was sampled successfully; callers may persist
        /// it alongside the shortfall report.
        samples: Vec<SampledQuery>,
    },
    #[error(transparent)]
    Engine(#[from] EngineError),
}

/// Bindings collected while grounding one subtree, in pre-order.
#[derive(Default)]
struct Bindings {
    anchors: Vec<EntityId>,
    relations: Vec<RelationId>,
}

impl Bindings {
    fn append(&mut self, mut other: Bindings) {
        self.anchors.append(&mut other.anchors);
        self.relations.append(&mut other.relations);
    }
}

/// Why a single grounding try stopped.
enum Stop {
    /// Vertex with no usable structure; the try is abandoned and the seed
    /// redrawn.
    DeadEnd,
    /// The shared retry budget ran out mid-try.
    Exhausted,
    Engine(EngineError),
}

/// Ground `pattern` once, retrying dead ends against `budget`. Each try,
/// successful or not, consumes one unit of budget. The returned query
/// contains the seed vertex in its answer set whenever the pattern is
/// negation-free.
pub fn ground<R: Rng>(
    kg: &KnowledgeGraph,
    pattern: &Formula,
    rng: &mut R,
    budget: &mut usize,
) -> Result<Grounding, SamplerError> {
    if kg.entity_count() == 0 {
        return Err(SamplerError::EmptyGraph);
    }
    while *budget > 0 {
        *budget -= 1;
        let seed_entity = sample_vertex(kg, rng);
        match ground_node(kg, pattern, seed_entity, rng, budget) {
            Ok(b) => {
                return Ok(Grounding {
                    query: GroundedQuery {
                        formula: pattern.clone(),
                        anchors: b.anchors,
                        relations: b.relations,
                    },
                    seed_entity,
                })
            }
            Err(Stop::DeadEnd) => continue,
            Err(Stop::Exhausted) => break,
            Err(Stop::Engine(e)) => return Err(e.into()),
        }
    }
    Err(SamplerError::RetriesExhausted { pattern: pattern.render() })
}

fn sample_vertex<R: Rng>(kg: &KnowledgeGraph, rng: &mut R) -> EntityId {
    EntityId(rng.gen_range(0..kg.entity_count() as u64) as u32)
}

fn ground_node<R: Rng>(
    kg: &KnowledgeGraph,
    f: &Formula,
    v: EntityId,
    rng: &mut R,
    budget: &mut usize,
) -> Result<Bindings, Stop> {
    match f {
        Formula::Entity => Ok(Bindings { anchors: vec![v], relations: vec![] }),
        Formula::Projection(child) => {
            let edges = kg.incoming_edges(v).map_err(|e| Stop::Engine(e.into()))?;
            if edges.is_empty() {
                return Err(Stop::DeadEnd);
            }
            let (source, relation) = edges[rng.gen_range(0..edges.len() as u64) as usize];
            let inner = ground_node(kg, child, source, rng, budget)?;
            let mut b = Bindings { anchors: vec![], relations: vec![relation] };
            b.append(inner);
            Ok(b)
        }
        Formula::Intersection(a, b) => {
            match (negated_operand(a), negated_operand(b)) {
                (None, None) => {
                    let mut left = ground_node(kg, a, v, rng, budget)?;
                    left.append(ground_node(kg, b, v, rng, budget)?);
                    Ok(left)
                }
                // One operand is complemented: ground the positive side on
                // the answer vertex, then redraw the complemented side's
                // vertex until the difference keeps something.
                (Some(neg_inner), None) => {
                    let positive = ground_node(kg, b, v, rng, budget)?;
                    let negative =
                        ground_negated(kg, neg_inner, b, &positive, rng, budget)?;
                    let mut out = Bindings::default();
                    out.append(negative);
                    out.append(positive);
                    Ok(out)
                }
                (None, Some(neg_inner)) => {
                    let positive = ground_node(kg, a, v, rng, budget)?;
                    let negative =
                        ground_negated(kg, neg_inner, a, &positive, rng, budget)?;
                    let mut out = Bindings::default();
                    out.append(positive);
                    out.append(negative);
                    Ok(out)
                }
                (Some(_), Some(_)) => {
                    Err(Stop::Engine(EngineError::BothOperandsNegated))
                }
            }
        }
        Formula::Union(a, b) => {
            let mut left = ground_node(kg, a, v, rng, budget)?;
            let fresh = sample_vertex(kg, rng);
            left.append(ground_node(kg, b, fresh, rng, budget)?);
            Ok(left)
        }
        // Reached only via ground_negated; a bare complement here means
        // the formula was malformed.
        Formula::Negation(_) => Err(Stop::Engine(EngineError::StrayNegation)),
    }
}

/// Ground the operand under a complement from an independently drawn
/// vertex, redrawing until the difference against the already-grounded
/// positive sibling is non-empty. Each redraw consumes budget.
fn ground_negated<R: Rng>(
    kg: &KnowledgeGraph,
    neg_inner: &Formula,
    positive_formula: &Formula,
    positive: &Bindings,
    rng: &mut R,
    budget: &mut usize,
) -> Result<Bindings, Stop> {
    let positive_answers = engine::answer(
        kg,
        &GroundedQuery {
            formula: positive_formula.clone(),
            anchors: positive.anchors.clone(),
            relations: positive.relations.clone(),
        },
    )
    .map_err(Stop::Engine)?;
    loop {
        if *budget == 0 {
            return Err(Stop::Exhausted);
        }
        *budget -= 1;
        let w = sample_vertex(kg, rng);
        let candidate = match ground_node(kg, neg_inner, w, rng, budget) {
            Ok(b) => b,
            Err(Stop::DeadEnd) => continue,
            Err(stop) => return Err(stop),
        };
        let negated_answers = engine::answer(
            kg,
            &GroundedQuery {
                formula: neg_inner.clone(),
                anchors: candidate.anchors.clone(),
                relations: candidate.relations.clone(),
            },
        )
        .map_err(Stop::Engine)?;
        if positive_answers.difference(&negated_answers).next().is_some() {
            let mut wrapped = Bindings::default();
            wrapped.append(candidate);
            return Ok(wrapped);
        }
    }
}

/// Returns the operand under a complement, if this node is one.
fn negated_operand(f: &Formula) -> Option<&Formula> {
    match f {
        Formula::Negation(inner) => Some(inner),
        _ => None,
    }
}

/// Duplicate key: two groundings asking the same thing collapse to one.
fn dedup_key(kg: &KnowledgeGraph, q: &GroundedQuery) -> String {
    let mut key = q.formula.render();
    for &r in &q.relations {
        key.push('|');
        key.push_str(&kg.relation(r).expect("bound relation exists").name);
    }
    for &a in &q.anchors {
        key.push('|');
        key.push_str(&kg.entity(a).expect("bound anchor exists").name);
    }
    key
}

/// Sample the full benchmark: for each catalog pattern, exactly
/// `questions_per_pattern` distinct groundings whose answer size lies in
/// `[min_answers, max_answers]`. Patterns draw from independent RNG
/// streams seeded `config.seed ^ pattern_index`, so outputs are stable
/// under the same inputs and patterns could be drawn concurrently.
pub fn sample_benchmark(
    kg: &KnowledgeGraph,
    catalog: &Catalog,
    config: &SamplerConfig,
) -> Result<Vec<SampledQuery>, SamplerError> {
    config.validate()?;
    if kg.entity_count() == 0 {
        return Err(SamplerError::EmptyGraph);
    }
    let mut samples = Vec::new();
    let mut shortfalls = Vec::new();
    for pattern in catalog.patterns() {
        let mut rng = ChaCha12Rng::seed_from_u64(config.seed ^ pattern.index as u64);
        let mut seen = HashSet::new();
        let mut got = 0usize;
        'slots: while got < config.questions_per_pattern {
            let mut budget = config.max_retries_per_question;
            loop {
                if budget == 0 {
                    break 'slots;
                }
                let grounding = match ground(kg, &pattern.formula, &mut rng, &mut budget) {
                    Ok(g) => g,
                    Err(SamplerError::RetriesExhausted { .. }) => break 'slots,
                    Err(e) => return Err(e),
                };
                let answers = engine::answer(kg, &grounding.query)?;
                if answers.len() < config.min_answers || answers.len() > config.max_answers {
                    continue;
                }
                if !seen.insert(dedup_key(kg, &grounding.query)) {
                    continue;
                }
                samples.push(SampledQuery {
                    pattern_index: pattern.index,
                    query: grounding.query,
                    seed_entity: grounding.seed_entity,
                    answers,
                });
                got += 1;
                break;
            }
        }
        if got < config.questions_per_pattern {
            shortfalls.push(PatternShortfall {
                pattern_index: pattern.index,
                formula: pattern.formula.render(),
                got,
                want: config.questions_per_pattern,
            });
        }
    }
    if shortfalls.is_empty() {
        Ok(samples)
    } else {
        Err(SamplerError::Shortfall { shortfalls, samples })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formula::Family;

    fn chain_graph() -> KnowledgeGraph {
        // Dense enough that every pattern with depth <= 2 grounds easily.
        let mut triples = Vec::new();
        for i in 0..20u32 {
            for j in 0..20u32 {
                if i != j && (i + j) % 3 == 0 {
                    triples.push((format!("e{i}"), "r0".to_string(), format!("e{j}")));
                }
                if i != j && (i * j) % 5 == 1 {
                    triples.push((format!("e{i}"), "r1".to_string(), format!("e{j}")));
                }
            }
        }
        KnowledgeGraph::from_named_triples(
            triples.iter().map(|(h, r, t)| (h.as_str(), r.as_str(), t.as_str())),
        )
        .unwrap()
    }

    #[test]
    fn seed_vertex_is_an_answer_for_negation_free_patterns() {
        let kg = chain_graph();
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        for f in [
            "(p,(e))",
            "(p,(p,(e)))",
            "(i,(p,(e)),(p,(e)))",
            "(u,(p,(e)),(p,(e)))",
            "(u,(p,(e)),(p,(p,(e))))",
            "(p,(i,(p,(e)),(p,(e))))",
            "(i,(i,(p,(e)),(p,(e))),(p,(e)))",
        ] {
            let pattern = Formula::parse(f).unwrap();
            for _ in 0..20 {
                let mut budget = 500;
                let g = ground(&kg, &pattern, &mut rng, &mut budget).unwrap();
                let answers = engine::answer(&kg, &g.query).unwrap();
                assert!(
                    answers.contains(&g.seed_entity),
                    "seed vertex not an answer for {f}"
                );
            }
        }
    }

    #[test]
    fn negation_groundings_have_non_empty_answers() {
        let kg = chain_graph();
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        for f in [
            "(i,(n,(p,(e))),(p,(e)))",
            "(i,(p,(e)),(n,(p,(e))))",
            "(i,(n,(p,(p,(e)))),(p,(e)))",
        ] {
            let pattern = Formula::parse(f).unwrap();
            for _ in 0..20 {
                let mut budget = 500;
                let g = ground(&kg, &pattern, &mut rng, &mut budget).unwrap();
                let answers = engine::answer(&kg, &g.query).unwrap();
                assert!(!answers.is_empty(), "empty difference emitted for {f}");
            }
        }
    }

    #[test]
    fn bindings_land_in_pre_order_positions() {
        let kg = chain_graph();
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let pattern = Formula::parse("(i,(n,(p,(e))),(p,(e)))").unwrap();
        let mut budget = 500;
        let g = ground(&kg, &pattern, &mut rng, &mut budget).unwrap();
        // The engine rechecks binding counts; a misordered split would
        // change the answer set and break the non-empty guarantee.
        assert_eq!(g.query.anchors.len(), 2);
        assert_eq!(g.query.relations.len(), 2);
        assert!(!engine::answer(&kg, &g.query).unwrap().is_empty());
    }

    #[test]
    fn dead_end_seeds_are_retried() {
        // Entity "a" has no incoming edges, so roughly a third of seed
        // draws dead-end and must be retried.
        let kg = KnowledgeGraph::from_named_triples([("a", "r", "b"), ("b", "r", "c")]).unwrap();
        let pattern = Formula::parse("(p,(e))").unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        for _ in 0..50 {
            let mut budget = 500;
            let g = ground(&kg, &pattern, &mut rng, &mut budget).unwrap();
            let answers = engine::answer(&kg, &g.query).unwrap();
            assert!(answers.contains(&g.seed_entity));
        }
    }

    #[test]
    fn impossible_pattern_exhausts_its_budget() {
        // Longest chain is 2, so a 3-hop chain can never ground.
        let kg = KnowledgeGraph::from_named_triples([("a", "r", "b"), ("b", "r", "c")]).unwrap();
        let pattern = Formula::parse("(p,(p,(p,(e))))").unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let mut budget = 100;
        let err = ground(&kg, &pattern, &mut rng, &mut budget).unwrap_err();
        assert!(matches!(err, SamplerError::RetriesExhausted { .. }));
        assert_eq!(budget, 0);
    }

    #[test]
    fn benchmark_meets_quota_with_distinct_in_range_answers() {
        let kg = chain_graph();
        let catalog = Catalog::parse(
            "(p,(e))|Projection|1|1\n(i,(p,(e)),(p,(e)))|Intersection|1|2\n",
        )
        .unwrap();
        let config = SamplerConfig {
            min_answers: 1,
            max_answers: 50,
            questions_per_pattern: 5,
            seed: 42,
            ..SamplerConfig::default()
        };
        let samples = sample_benchmark(&kg, &catalog, &config).unwrap();
        assert_eq!(samples.len(), 10);
        let mut keys = HashSet::new();
        for s in &samples {
            assert!(s.answers.len() >= 1 && s.answers.len() <= 50);
            assert!(keys.insert(dedup_key(&kg, &s.query)), "duplicate emitted");
            assert_eq!(engine::answer(&kg, &s.query).unwrap(), s.answers);
        }
    }

    #[test]
    fn benchmark_is_deterministic() {
        let kg = chain_graph();
        let catalog =
            Catalog::parse("(p,(e))|Projection|1|1\n(u,(p,(e)),(p,(e)))|Union|1|2\n").unwrap();
        let config = SamplerConfig {
            min_answers: 1,
            max_answers: 100,
            questions_per_pattern: 4,
            seed: 9,
            ..SamplerConfig::default()
        };
        let a = sample_benchmark(&kg, &catalog, &config).unwrap();
        let b = sample_benchmark(&kg, &catalog, &config).unwrap();
        assert_eq!(a, b);
        let other = SamplerConfig { seed: 10, ..config };
        let c = sample_benchmark(&kg, &catalog, &other).unwrap();
        assert_ne!(a, c, "different seeds should explore differently");
    }

    #[test]
    fn shortfall_reports_the_starving_pattern_and_keeps_partials() {
        let kg = KnowledgeGraph::from_named_triples([("a", "r", "b"), ("b", "r", "c")]).unwrap();
        let catalog = Catalog::parse(
            "(p,(e))|Projection|1|1\n(p,(p,(p,(e))))|Projection|3|1\n",
        )
        .unwrap();
        let config = SamplerConfig {
            min_answers: 1,
            max_answers: 10,
            questions_per_pattern: 2,
            max_retries_per_question: 50,
            seed: 0,
        };
        let err = sample_benchmark(&kg, &catalog, &config).unwrap_err();
        match err {
            SamplerError::Shortfall { shortfalls, samples } => {
                assert_eq!(shortfalls.len(), 1);
                assert_eq!(shortfalls[0].pattern_index, 1);
                assert_eq!(shortfalls[0].got, 0);
                assert_eq!(shortfalls[0].want, 2);
                assert!(samples.iter().all(|s| s.pattern_index == 0));
                assert_eq!(samples.len(), 2);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn config_validation() {
        let bad = [
            SamplerConfig { min_answers: 0, ..SamplerConfig::default() },
            SamplerConfig { min_answers: 20, max_answers: 10, ..SamplerConfig::default() },
            SamplerConfig { max_retries_per_question: 0, ..SamplerConfig::default() },
            SamplerConfig { questions_per_pattern: 0, ..SamplerConfig::default() },
        ];
        for config in bad {
            assert!(matches!(config.validate(), Err(SamplerError::BadConfig(_))));
        }
        assert!(SamplerConfig::default().validate().is_ok());
    }

    #[test]
    fn all_catalog_families_ground_on_a_dense_graph() {
        let kg = chain_graph();
        let catalog = Catalog::builtin();
        for family in [
            Family::Projection,
            Family::Intersection,
            Family::Union,
            Family::Negation,
        ] {
            // Depth-1 and depth-2 representatives; depth-3 chains need the
            // richer fixture graph exercised in integration tests.
            let pattern = catalog
                .by_family(family)
                .into_iter()
                .find(|p| p.depth == 1)
                .unwrap();
            let mut rng = ChaCha12Rng::seed_from_u64(13);
            let mut budget = 500;
            let g = ground(&kg, &pattern.formula, &mut rng, &mut budget).unwrap();
            assert!(engine::answer(&kg, &g.query).is_ok());
        }
    }
}
