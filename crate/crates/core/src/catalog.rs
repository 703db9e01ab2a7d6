//! Query pattern catalog.
//!
//! A catalog line is `formula|family|depth|variety`. The declared family,
//! depth, and variety must agree with what the formula itself computes;
//! a catalog that disagrees with its own formulas is rejected. A built-in
//! 26-pattern catalog covering all four families at depths 1 to 3 ships
//! with the crate.

use std::path::Path;

use thiserror::Error;

use crate::formula::{Family, Formula, FormulaError};

const BUILTIN: &str = include_str!("../data/catalog.txt");

/// One catalog entry. `index` is the zero-based position in the catalog
/// and is the stable pattern identifier in all downstream artifacts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pattern {
    pub index: usize,
    pub formula: Formula,
    pub family: Family,
    pub depth: usize,
    pub variety: usize,
    /// True when the source line needed the lenient-parse repair.
    pub repaired: bool,
}

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: expected 4 pipe-separated fields, found {found}")]
    BadFieldCount { line: usize, found: usize },
    #[error("line {line}: {source}")]
    Formula {
        line: usize,
        #[source]
        source: FormulaError,
    },
    #[error("line {line}: unknown family {0:?}", .family)]
    BadFamily { line: usize, family: String },
    #[error("line {line}: {field} declared as {declared} but the formula computes {computed}")]
    Mismatch {
        line: usize,
        field: &'static str,
        declared: String,
        computed: String,
    },
    #[error("line {line}: duplicate formula {formula}")]
    Duplicate { line: usize, formula: String },
    #[error("catalog is empty")]
    Empty,
}

/// An ordered, validated set of query patterns.
#[derive(Debug, Clone)]
pub struct Catalog {
    patterns: Vec<Pattern>,
}

impl Catalog {
    /// The catalog shipped with the crate: 26 patterns, 6 projection,
    /// 6 intersection, 6 union, 8 negation.
    pub fn builtin() -> Catalog {
        Catalog::parse(BUILTIN).expect("shipped catalog is valid")
    }

    pub fn load(path: &Path) -> Result<Catalog, CatalogError> {
        let text = std::fs::read_to_string(path).map_err(|source| CatalogError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Catalog::parse(&text)
    }

    /// Parse catalog text. Blank lines and `#` comments are skipped.
    /// Formulas are parsed leniently; repairs are recorded per pattern.
    pub fn parse(text: &str) -> Result<Catalog, CatalogError> {
        let mut patterns = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('|').map(str::trim).collect();
            if fields.len() != 4 {
                return Err(CatalogError::BadFieldCount { line: line_no, found: fields.len() });
            }
            let parsed = Formula::parse_lenient(fields[0])
                .map_err(|source| CatalogError::Formula { line: line_no, source })?;
            let family = Family::parse(fields[1]).ok_or_else(|| CatalogError::BadFamily {
                line: line_no,
                family: fields[1].to_string(),
            })?;
            let depth: usize = fields[2].parse().map_err(|_| CatalogError::Mismatch {
                line: line_no,
                field: "depth",
                declared: fields[2].to_string(),
                computed: "an unsigned integer".to_string(),
            })?;
            let variety: usize = fields[3].parse().map_err(|_| CatalogError::Mismatch {
                line: line_no,
                field: "variety",
                declared: fields[3].to_string(),
                computed: "an unsigned integer".to_string(),
            })?;
            let f = parsed.formula;
            let checks: [(&'static str, String, String); 3] = [
                ("family", family.to_string(), f.family().to_string()),
                ("depth", depth.to_string(), f.depth().to_string()),
                ("variety", variety.to_string(), f.variety().to_string()),
            ];
            for (field, declared, computed) in checks {
                if declared != computed {
                    return Err(CatalogError::Mismatch { line: line_no, field, declared, computed });
                }
            }
            if patterns.iter().any(|p: &Pattern| p.formula == f) {
                return Err(CatalogError::Duplicate { line: line_no, formula: f.render() });
            }
            patterns.push(Pattern {
                index: patterns.len(),
                formula: f,
                family,
                depth,
                variety,
                repaired: parsed.repaired,
            });
        }
        if patterns.is_empty() {
            return Err(CatalogError::Empty);
        }
        Ok(Catalog { patterns })
    }

    pub fn len(&self) -> usize {
        self.patterns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patterns.is_empty()
    }

    pub fn patterns(&self) -> &[Pattern] {
        &self.patterns
    }

    pub fn get(&self, index: usize) -> Option<&Pattern> {
        self.patterns.get(index)
    }

    /// Patterns of one family, in catalog order.
    pub fn by_family(&self, family: Family) -> Vec<&Pattern> {
        self.patterns.iter().filter(|p| p.family == family).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_has_26_patterns_with_expected_family_sizes() {
        let cat = Catalog::builtin();
        assert_eq!(cat.len(), 26);
        assert_eq!(cat.by_family(Family::Projection).len(), 6);
        assert_eq!(cat.by_family(Family::Intersection).len(), 6);
        assert_eq!(cat.by_family(Family::Union).len(), 6);
        assert_eq!(cat.by_family(Family::Negation).len(), 8);
        assert!(cat.patterns().iter().all(|p| !p.repaired));
    }

    #[test]
    fn builtin_depth_distribution() {
        let cat = Catalog::builtin();
        let count_depth =
            |d: usize| cat.patterns().iter().filter(|p| p.depth == d).count();
        assert_eq!(count_depth(1), 10);
        assert_eq!(count_depth(2), 11);
        assert_eq!(count_depth(3), 5);
    }

    #[test]
    fn builtin_round_trips_through_render() {
        let cat = Catalog::builtin();
        for p in cat.patterns() {
            let back = Formula::parse(&p.formula.render()).unwrap();
            assert_eq!(back, p.formula);
        }
    }

    #[test]
    fn mean_operation_count_per_family() {
        // Sanity anchor for the complexity axes: the catalog means are
        // fixed properties of the shipped formulas.
        let cat = Catalog::builtin();
        let mean = |family: Family| {
            let ps = cat.by_family(family);
            let total: usize = ps.iter().map(|p| p.formula.operation_count()).sum();
            total as f64 / ps.len() as f64
        };
        assert!((mean(Family::Projection) - 3.17).abs() <= 0.005);
        assert!((mean(Family::Intersection) - 4.83).abs() <= 0.005);
        assert!((mean(Family::Union) - 4.83).abs() <= 0.005);
        assert!((mean(Family::Negation) - 5.88).abs() <= 0.005);
        let depth1: Vec<_> = cat.patterns().iter().filter(|p| p.depth == 1).collect();
        let d1_total: usize = depth1.iter().map(|p| p.formula.operation_count()).sum();
        assert!((d1_total as f64 / depth1.len() as f64 - 4.30).abs() <= 0.005);
    }

    #[test]
    fn declared_classification_must_match_formula() {
        let err = Catalog::parse("(p,(e))|Projection|2|1\n").unwrap_err();
        match err {
            CatalogError::Mismatch { line, field, declared, computed } => {
                assert_eq!(line, 1);
                assert_eq!(field, "depth");
                assert_eq!(declared, "2");
                assert_eq!(computed, "1");
            }
            other => panic!("unexpected error {other:?}"),
        }
        assert!(matches!(
            Catalog::parse("(p,(e))|Union|1|1\n").unwrap_err(),
            CatalogError::Mismatch { field: "family", .. }
        ));
    }

    #[test]
    fn repaired_lines_are_flagged() {
        let text = "(i,(n,(i,(p,(e)),(p,(e))))),(p,(e))|Negation|1|3\n";
        let cat = Catalog::parse(text).unwrap();
        assert!(cat.get(0).unwrap().repaired);
        assert_eq!(
            cat.get(0).unwrap().formula.render(),
            "(i,(n,(i,(p,(e)),(p,(e)))),(p,(e)))"
        );
    }

    #[test]
    fn comments_and_blanks_are_skipped() {
        let cat = Catalog::parse("# header\n\n(p,(e))|Projection|1|1\n").unwrap();
        assert_eq!(cat.len(), 1);
    }

    #[test]
    fn duplicates_and_empty_are_rejected() {
        let dup = "(p,(e))|Projection|1|1\n(p,(e))|Projection|1|1\n";
        assert!(matches!(
            Catalog::parse(dup).unwrap_err(),
            CatalogError::Duplicate { line: 2, .. }
        ));
        assert!(matches!(
            Catalog::parse("# nothing\n").unwrap_err(),
            CatalogError::Empty
        ));
    }

    #[test]
    fn field_count_errors_name_the_line() {
        assert!(matches!(
            Catalog::parse("(p,(e))|Projection|1\n").unwrap_err(),
            CatalogError::BadFieldCount { line: 1, found: 3 }
        ));
    }
}
