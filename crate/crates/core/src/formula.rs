//! First-order query formulas over a knowledge graph.
//!
//! A formula is an operator tree in a LISP-like surface syntax:
//!
//! ```text
//! (p,(i,(p,(e)),(p,(e))))
//! ```
//!
//! `e` marks an anchor-entity slot, `p` projects a relation, `i` and `u`
//! intersect and union exactly two operand sets, and `n` complements its
//! operand. `n` is only legal as a direct child of `i`: set difference is
//! the one computable use of complement over an open-world graph.

use std::fmt;

use thiserror::Error;

/// Operator tree node. Leaves are `Entity`; the tree is shaped before any
/// anchors or relations are bound to it.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Formula {
    /// Anchor-entity slot.
    Entity,
    /// Relational projection of the operand set.
    Projection(Box<Formula>),
    /// Intersection of exactly two operand sets.
    Intersection(Box<Formula>, Box<Formula>),
    /// Union of exactly two operand sets.
    Union(Box<Formula>, Box<Formula>),
    /// Complement; legal only directly under `Intersection`.
    Negation(Box<Formula>),
}

/// Top-level shape family a formula belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Family {
    Projection,
    Intersection,
    Union,
    Negation,
}

impl Family {
    pub fn as_str(self) -> &'static str {
        match self {
            Family::Projection => "Projection",
            Family::Intersection => "Intersection",
            Family::Union => "Union",
            Family::Negation => "Negation",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "Projection" => Some(Family::Projection),
            "Intersection" => Some(Family::Intersection),
            "Union" => Some(Family::Union),
            "Negation" => Some(Family::Negation),
            _ => None,
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FormulaError {
    #[error("offset {offset}: expected {expected}, found {found:?}")]
    Unexpected {
        offset: usize,
        expected: &'static str,
        found: String,
    },
    #[error("offset {offset}: trailing input after formula")]
    TrailingInput { offset: usize },
    #[error("unexpected end of input")]
    UnexpectedEnd,
    #[error("{op} takes exactly {want} operands, found {found}")]
    BadArity {
        op: char,
        want: usize,
        found: usize,
    },
    #[error("negation is only legal as a direct child of an intersection")]
    StrayNegation,
    #[error("double negation is not allowed")]
    DoubleNegation,
    #[error("an intersection needs at least one non-negated operand")]
    BothOperandsNegated,
}

/// Parse result carrying a repair flag. `repaired` is false for strict
/// parses and for lenient parses that needed no intervention.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Parsed {
    pub formula: Formula,
    pub repaired: bool,
}

impl Formula {
    /// Parse the surface syntax exactly. Whitespace between tokens is
    /// tolerated; any structural defect is an error.
    pub fn parse(input: &str) -> Result<Formula, FormulaError> {
        let parsed = parse_impl(input, false)?;
        debug_assert!(!parsed.repaired);
        Ok(parsed.formula)
    }

    /// Parse with one repair: when the root's parenthesis closes early and
    /// well-formed siblings dangle after it, absorb them as extra operands
    /// of the root. Published pattern tables occasionally misplace the
    /// root's closing parenthesis this way.
    pub fn parse_lenient(input: &str) -> Result<Parsed, FormulaError> {
        parse_impl(input, true)
    }

    /// Canonical surface form; `parse` of this string reproduces `self`.
    pub fn render(&self) -> String {
        let mut out = String::new();
        self.render_into(&mut out);
        out
    }

    fn render_into(&self, out: &mut String) {
        match self {
            Formula::Entity => out.push_str("(e)"),
            Formula::Projection(c) => {
                out.push_str("(p,");
                c.render_into(out);
                out.push(')');
            }
            Formula::Intersection(a, b) => {
                out.push_str("(i,");
                a.render_into(out);
                out.push(',');
                b.render_into(out);
                out.push(')');
            }
            Formula::Union(a, b) => {
                out.push_str("(u,");
                a.render_into(out);
                out.push(',');
                b.render_into(out);
                out.push(')');
            }
            Formula::Negation(c) => {
                out.push_str("(n,");
                c.render_into(out);
                out.push(')');
            }
        }
    }

    /// Number of anchor-entity slots.
    pub fn anchor_count(&self) -> usize {
        match self {
            Formula::Entity => 1,
            Formula::Projection(c) | Formula::Negation(c) => c.anchor_count(),
            Formula::Intersection(a, b) | Formula::Union(a, b) => {
                a.anchor_count() + b.anchor_count()
            }
        }
    }

    /// Number of projection slots, each of which binds one relation.
    pub fn projection_count(&self) -> usize {
        match self {
            Formula::Entity => 0,
            Formula::Projection(c) => 1 + c.projection_count(),
            Formula::Negation(c) => c.projection_count(),
            Formula::Intersection(a, b) | Formula::Union(a, b) => {
                a.projection_count() + b.projection_count()
            }
        }
    }

    /// Total operator nodes (`p`, `i`, `u`, `n`); anchors are excluded.
    pub fn operation_count(&self) -> usize {
        match self {
            Formula::Entity => 0,
            Formula::Projection(c) | Formula::Negation(c) => 1 + c.operation_count(),
            Formula::Intersection(a, b) | Formula::Union(a, b) => {
                1 + a.operation_count() + b.operation_count()
            }
        }
    }

    /// Number of negation nodes.
    pub fn negation_count(&self) -> usize {
        match self {
            Formula::Entity => 0,
            Formula::Negation(c) => 1 + c.negation_count(),
            Formula::Projection(c) => c.negation_count(),
            Formula::Intersection(a, b) | Formula::Union(a, b) => {
                a.negation_count() + b.negation_count()
            }
        }
    }

    /// Maximum number of projection nodes on any root-to-leaf path: the
    /// longest relational chain an answer entity sits at the end of.
    pub fn depth(&self) -> usize {
        match self {
            Formula::Entity => 0,
            Formula::Projection(c) => 1 + c.depth(),
            Formula::Negation(c) => c.depth(),
            Formula::Intersection(a, b) | Formula::Union(a, b) => a.depth().max(b.depth()),
        }
    }

    /// Number of distinct operator kinds present.
    pub fn variety(&self) -> usize {
        let mut seen = [false; 4];
        self.mark_kinds(&mut seen);
        seen.iter().filter(|&&s| s).count()
    }

    fn mark_kinds(&self, seen: &mut [bool; 4]) {
        match self {
            Formula::Entity => {}
            Formula::Projection(c) => {
                seen[0] = true;
                c.mark_kinds(seen);
            }
            Formula::Intersection(a, b) => {
                seen[1] = true;
                a.mark_kinds(seen);
                b.mark_kinds(seen);
            }
            Formula::Union(a, b) => {
                seen[2] = true;
                a.mark_kinds(seen);
                b.mark_kinds(seen);
            }
            Formula::Negation(c) => {
                seen[3] = true;
                c.mark_kinds(seen);
            }
        }
    }

    /// Family: negation wins when the root intersection has a complemented
    /// operand, otherwise the root operator decides.
    pub fn family(&self) -> Family {
        match self {
            Formula::Entity => Family::Projection,
            Formula::Projection(_) => Family::Projection,
            Formula::Intersection(a, b) => {
                if matches!(**a, Formula::Negation(_)) || matches!(**b, Formula::Negation(_)) {
                    Family::Negation
                } else {
                    Family::Intersection
                }
            }
            Formula::Union(_, _) => Family::Union,
            Formula::Negation(_) => Family::Negation,
        }
    }

    /// True when no negation node appears anywhere in the tree.
    pub fn is_negation_free(&self) -> bool {
        self.negation_count() == 0
    }
}

impl fmt::Display for Formula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

struct Parser<'a> {
    bytes: &'a [u8],
    pos: usize,
}

/// Raw parse tree before arity and negation-placement checks.
enum Node {
    Entity,
    Op(char, Vec<Node>),
}

impl<'a> Parser<'a> {
    fn skip_ws(&mut self) {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.bytes.get(self.pos).copied()
    }

    fn expect(&mut self, ch: u8, expected: &'static str) -> Result<(), FormulaError> {
        match self.peek() {
            Some(c) if c == ch => {
                self.pos += 1;
                Ok(())
            }
            Some(c) => Err(FormulaError::Unexpected {
                offset: self.pos,
                expected,
                found: (c as char).to_string(),
            }),
            None => Err(FormulaError::UnexpectedEnd),
        }
    }

    fn node(&mut self) -> Result<Node, FormulaError> {
        self.expect(b'(', "'('")?;
        let op = match self.peek() {
            Some(c @ (b'p' | b'i' | b'u' | b'n' | b'e')) => {
                self.pos += 1;
                c as char
            }
            Some(c) => {
                return Err(FormulaError::Unexpected {
                    offset: self.pos,
                    expected: "one of p, i, u, n, e",
                    found: (c as char).to_string(),
                })
            }
            None => return Err(FormulaError::UnexpectedEnd),
        };
        if op == 'e' {
            self.expect(b')', "')'")?;
            return Ok(Node::Entity);
        }
        let mut operands = Vec::new();
        while self.peek() == Some(b',') {
            self.pos += 1;
            operands.push(self.node()?);
        }
        self.expect(b')', "',' or ')'")?;
        Ok(Node::Op(op, operands))
    }
}

fn parse_impl(input: &str, lenient: bool) -> Result<Parsed, FormulaError> {
    let mut p = Parser { bytes: input.as_bytes(), pos: 0 };
    let mut root = p.node()?;
    let mut repaired = false;
    if lenient {
        // A misplaced root parenthesis leaves well-formed operands dangling
        // as ",(...)" tails. Pull them back under the root.
        if let Node::Op(_, operands) = &mut root {
            while p.peek() == Some(b',') {
                p.pos += 1;
                operands.push(p.node()?);
                repaired = true;
            }
        }
    }
    p.skip_ws();
    if p.pos != p.bytes.len() {
        return Err(FormulaError::TrailingInput { offset: p.pos });
    }
    let formula = check(root, false)?;
    Ok(Parsed { formula, repaired })
}

/// Enforce arity and negation placement on the raw tree.
fn check(node: Node, under_intersection: bool) -> Result<Formula, FormulaError> {
    match node {
        Node::Entity => Ok(Formula::Entity),
        Node::Op(op, operands) => {
            let found = operands.len();
            let want = match op {
                'p' | 'n' => 1,
                'i' | 'u' => 2,
                _ => unreachable!("parser only emits p, i, u, n"),
            };
            if found != want {
                return Err(FormulaError::BadArity { op, want, found });
            }
            let mut children = operands.into_iter();
            match op {
                'p' => Ok(Formula::Projection(Box::new(check(
                    children.next().unwrap(),
                    false,
                )?))),
                'n' => {
                    if !under_intersection {
                        return Err(FormulaError::StrayNegation);
                    }
                    let inner = children.next().unwrap();
                    if matches!(inner, Node::Op('n', _)) {
                        return Err(FormulaError::DoubleNegation);
                    }
                    Ok(Formula::Negation(Box::new(check(inner, false)?)))
                }
                'i' => {
                    let a = check(children.next().unwrap(), true)?;
                    let b = check(children.next().unwrap(), true)?;
                    if matches!(a, Formula::Negation(_)) && matches!(b, Formula::Negation(_)) {
                        return Err(FormulaError::BothOperandsNegated);
                    }
                    Ok(Formula::Intersection(Box::new(a), Box::new(b)))
                }
                'u' => {
                    let a = check(children.next().unwrap(), false)?;
                    let b = check(children.next().unwrap(), false)?;
                    Ok(Formula::Union(Box::new(a), Box::new(b)))
                }
                _ => unreachable!(),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn f(s: &str) -> Formula {
        Formula::parse(s).unwrap()
    }

    #[test]
    fn parse_and_render_round_trip() {
        for s in [
            "(e)",
            "(p,(e))",
            "(p,(p,(p,(e))))",
            "(i,(p,(e)),(p,(p,(e))))",
            "(u,(u,(p,(e)),(p,(e))),(p,(e)))",
            "(i,(n,(u,(p,(e)),(p,(e)))),(p,(e)))",
            "(p,(i,(n,(p,(e))),(p,(e))))",
        ] {
            assert_eq!(f(s).render(), s, "round trip of {s}");
        }
    }

    #[test]
    fn whitespace_is_tolerated() {
        assert_eq!(f(" ( p , ( e ) ) ").render(), "(p,(e))");
    }

    #[test]
    fn unexpected_character_reports_offset() {
        let err = Formula::parse("(p,(x))").unwrap_err();
        match err {
            FormulaError::Unexpected { offset, found, .. } => {
                assert_eq!(offset, 4);
                assert_eq!(found, "x");
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn arity_is_enforced() {
        assert_eq!(
            Formula::parse("(i,(p,(e)))"),
            Err(FormulaError::BadArity { op: 'i', want: 2, found: 1 })
        );
        assert_eq!(
            Formula::parse("(i,(p,(e)),(p,(e)),(p,(e)))"),
            Err(FormulaError::BadArity { op: 'i', want: 2, found: 3 })
        );
        assert_eq!(
            Formula::parse("(p)"),
            Err(FormulaError::BadArity { op: 'p', want: 1, found: 0 })
        );
    }

    #[test]
    fn negation_placement_is_enforced() {
        assert_eq!(Formula::parse("(n,(p,(e)))"), Err(FormulaError::StrayNegation));
        assert_eq!(
            Formula::parse("(p,(n,(p,(e))))"),
            Err(FormulaError::StrayNegation)
        );
        assert_eq!(
            Formula::parse("(u,(n,(p,(e))),(p,(e)))"),
            Err(FormulaError::StrayNegation)
        );
        assert_eq!(
            Formula::parse("(i,(n,(n,(p,(e)))),(p,(e)))"),
            Err(FormulaError::DoubleNegation)
        );
        assert!(Formula::parse("(i,(n,(p,(e))),(p,(e)))").is_ok());
        assert!(Formula::parse("(i,(p,(e)),(n,(p,(e))))").is_ok());
        assert_eq!(
            Formula::parse("(i,(n,(p,(e))),(n,(p,(e))))"),
            Err(FormulaError::BothOperandsNegated)
        );
    }

    #[test]
    fn trailing_input_is_rejected() {
        assert!(matches!(
            Formula::parse("(p,(e))x"),
            Err(FormulaError::TrailingInput { .. })
        ));
        assert!(matches!(
            Formula::parse("(p,(e)),(p,(e))"),
            Err(FormulaError::TrailingInput { .. })
        ));
    }

    #[test]
    fn truncated_input_is_rejected() {
        assert_eq!(Formula::parse("(p,(e)"), Err(FormulaError::UnexpectedEnd));
        assert_eq!(Formula::parse(""), Err(FormulaError::UnexpectedEnd));
    }

    #[test]
    fn lenient_repairs_early_closed_root() {
        // The root parenthesis closes after the first operand; the second
        // dangles outside. Strict parsing rejects this, lenient absorbs it.
        let broken = "(i,(n,(i,(p,(e)),(p,(e))))),(p,(e))";
        assert!(Formula::parse(broken).is_err());
        let parsed = Formula::parse_lenient(broken).unwrap();
        assert!(parsed.repaired);
        assert_eq!(parsed.formula.render(), "(i,(n,(i,(p,(e)),(p,(e)))),(p,(e)))");
    }

    #[test]
    fn lenient_on_well_formed_input_is_not_a_repair() {
        let parsed = Formula::parse_lenient("(i,(p,(e)),(p,(e)))").unwrap();
        assert!(!parsed.repaired);
    }

    #[test]
    fn lenient_still_rejects_garbage() {
        assert!(Formula::parse_lenient("(p,(e)) junk").is_err());
        assert!(Formula::parse_lenient("(z,(e))").is_err());
        // Absorbing the dangling operand gives i three children.
        assert!(Formula::parse_lenient("(i,(p,(e)),(p,(e))),(p,(e))").is_err());
    }

    #[test]
    fn depth_counts_longest_projection_chain() {
        assert_eq!(f("(p,(e))").depth(), 1);
        assert_eq!(f("(p,(p,(p,(e))))").depth(), 3);
        assert_eq!(f("(i,(p,(e)),(p,(p,(e))))").depth(), 2);
        assert_eq!(f("(u,(p,(p,(p,(e)))),(p,(e)))").depth(), 3);
        // The chain is interrupted by an intersection but both projections
        // sit on one root-to-leaf path, so they both count.
        assert_eq!(f("(p,(i,(p,(e)),(p,(e))))").depth(), 2);
        assert_eq!(f("(i,(n,(p,(p,(e)))),(p,(e)))").depth(), 2);
    }

    #[test]
    fn variety_counts_distinct_operator_kinds() {
        assert_eq!(f("(p,(p,(e)))").variety(), 1);
        assert_eq!(f("(i,(p,(e)),(p,(e)))").variety(), 2);
        assert_eq!(f("(i,(n,(p,(e))),(p,(e)))").variety(), 3);
        assert_eq!(f("(i,(n,(u,(p,(e)),(p,(e)))),(p,(e)))").variety(), 4);
    }

    #[test]
    fn family_classification() {
        assert_eq!(f("(p,(i,(p,(e)),(p,(e))))").family(), Family::Projection);
        assert_eq!(f("(i,(p,(e)),(p,(e)))").family(), Family::Intersection);
        assert_eq!(f("(u,(i,(p,(e)),(p,(e))),(p,(e)))").family(), Family::Union);
        assert_eq!(f("(i,(n,(p,(e))),(p,(e)))").family(), Family::Negation);
        assert_eq!(f("(i,(p,(e)),(n,(p,(e))))").family(), Family::Negation);
        // A complement below the root does not make the family Negation.
        assert_eq!(f("(p,(i,(n,(p,(e))),(p,(e))))").family(), Family::Projection);
    }

    #[test]
    fn node_counts() {
        let g = f("(i,(n,(u,(p,(e)),(p,(e)))),(p,(e)))");
        assert_eq!(g.anchor_count(), 3);
        assert_eq!(g.projection_count(), 3);
        assert_eq!(g.operation_count(), 6);
        assert_eq!(g.negation_count(), 1);
        assert_eq!(f("(p,(e))").operation_count(), 1);
    }
}
