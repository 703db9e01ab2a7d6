//! Built-in synthetic benchmark graph.
//!
//! Ten dense blocks of forty entities each, with all edges staying
//! inside their block. Density is tuned so that every catalog pattern
//! can be grounded with answer sets inside the accepted size band:
//! single hops land around 24-28 answers, multi-hop sets saturate
//! toward the block size of 40, and the tightest case, a three-way
//! intersection of single hops, still clears the minimum often enough
//! for retry sampling to fill its quota. Unions may span blocks, which
//! keeps them well under the upper bound.
//!
//! Everything is generated from a fixed seed, so two builds on any
//! platform produce byte-identical graphs.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::kg::{KgError, KnowledgeGraph};
use crate::question::{QuestionError, TemplateSet};

const BLOCKS: usize = 10;
const BLOCK_SIZE: usize = 40;
const GENERATION_SEED: u64 = 0x0f1c_70f1_c70f_1c70;

const BLOCK_NAMES: [&str; BLOCKS] = [
    "alpha", "beta", "gamma", "delta", "epsilon", "zeta", "eta", "theta", "iota", "kappa",
];

/// Relation name, in-block edge density.
const RELATIONS: [(&str, f64); 4] = [
    ("mentors", 0.70),
    ("funds", 0.65),
    ("advises", 0.65),
    ("recruits", 0.60),
];

/// Verbalization templates for the fixture relations.
pub const TEMPLATE_TEXT: &str = "\
# relation<TAB>tail category<TAB>template
mentors\tpeople\t[TAIL] is mentored by [HEAD].
funds\tpeople\t[TAIL] receives funding from [HEAD].
advises\tpeople\t[TAIL] is advised by [HEAD].
recruits\tpeople\t[TAIL] was recruited by [HEAD].
";

fn entity_name(block: usize, index: usize) -> String {
    format!("{}-{:02}", BLOCK_NAMES[block], index)
}

/// The fixture's triples in generation order, as names.
pub fn triples() -> Vec<(String, String, String)> {
    let mut rng = ChaCha12Rng::seed_from_u64(GENERATION_SEED);
    let mut rows = Vec::new();
    for block in 0..BLOCKS {
        for (relation, density) in RELATIONS {
            for head in 0..BLOCK_SIZE {
                for tail in 0..BLOCK_SIZE {
                    if head == tail {
                        continue;
                    }
                    if rng.gen_bool(density) {
                        rows.push((
                            entity_name(block, head),
                            relation.to_string(),
                            entity_name(block, tail),
                        ));
                    }
                }
            }
        }
    }
    rows
}

/// Build the fixture graph in memory.
pub fn graph() -> Result<KnowledgeGraph, KgError> {
    KnowledgeGraph::from_named_triples(triples())
}

/// Parsed template set matching the fixture relations.
pub fn templates() -> Result<TemplateSet, QuestionError> {
    TemplateSet::parse(TEMPLATE_TEXT)
}

/// Write the graph as a three-column TSV loadable by the ingest stage.
pub fn write_graph_tsv(path: &Path) -> std::io::Result<()> {
    let mut out = String::new();
    for (head, relation, tail) in triples() {
        out.push_str(&head);
        out.push('\t');
        out.push_str(&relation);
        out.push('\t');
        out.push_str(&tail);
        out.push('\n');
    }
    std::fs::write(path, out)
}

/// Write the template file alongside the graph.
pub fn write_templates(path: &Path) -> std::io::Result<()> {
    std::fs::write(path, TEMPLATE_TEXT)
}
