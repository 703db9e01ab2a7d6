//! Answer scoring and aggregation.
//!
//! Model answers are free text, so they are matched against gold entity
//! names fuzzily: Jaro similarity with a Winkler common-prefix boost,
//! computed over case-folded, hyphen-and-whitespace-normalized strings.
//! A question's score is Precision@10 with the denominator fixed at ten
//! regardless of how many answers the model produced.
//!
//! All scoring is generic over the float width via [`Real`]; the crate
//! root exports [`crate::Score`] as the default concrete choice.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::Catalog;
use crate::formula::Family;
use crate::scalar::Real;

/// Fuzzy-match settings. `prefix_scale` and `max_prefix` are the Winkler
/// boost parameters; `threshold` is the minimum similarity for an answer
/// to count as correct.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchConfig<T> {
    pub threshold: T,
    pub prefix_scale: T,
    pub max_prefix: usize,
}

/// Threshold profile by knowledge-graph domain. Biomedical names differ
/// in tiny but meaningful ways (drug name suffixes), so that profile
/// demands near-exact matches.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KgProfile {
    General,
    Biomedical,
}

impl<T: Real> MatchConfig<T> {
    pub fn general() -> Self {
        MatchConfig {
            threshold: T::from_f64(0.90).unwrap(),
            prefix_scale: T::from_f64(0.1).unwrap(),
            max_prefix: 4,
        }
    }

    pub fn biomedical() -> Self {
        MatchConfig { threshold: T::from_f64(0.97).unwrap(), ..Self::general() }
    }

    pub fn for_profile(profile: KgProfile) -> Self {
        match profile {
            KgProfile::General => Self::general(),
            KgProfile::Biomedical => Self::biomedical(),
        }
    }

    pub fn validate(&self) -> Result<(), MetricsError> {
        if self.threshold <= T::zero() || self.threshold > T::one() {
            return Err(MetricsError::BadConfig(format!(
                "threshold {} outside (0, 1]",
                self.threshold
            )));
        }
        if self.prefix_scale < T::zero() {
            return Err(MetricsError::BadConfig("prefix_scale is negative".into()));
        }
        // Keeps the boosted similarity inside [0, 1].
        if self.prefix_scale * T::from_count(self.max_prefix) > T::one() {
            return Err(MetricsError::BadConfig(format!(
                "prefix_scale {} times max_prefix {} exceeds 1",
                self.prefix_scale, self.max_prefix
            )));
        }
        Ok(())
    }
}

impl<T: Real> Default for MatchConfig<T> {
    fn default() -> Self {
        Self::general()
    }
}

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("match config: {0}")]
    BadConfig(String),
    #[error("record references pattern index {0}, which is not in the catalog")]
    UnknownPattern(usize),
    #[error("set-operation weights undefined: both gold sets are empty")]
    ZeroWeights,
    #[error("no records to aggregate")]
    NoRecords,
}

/// Canonical matching form: case-folded, hyphens as spaces, whitespace
/// runs collapsed. Absorbs the capitalization and hyphenation drift that
/// separates a correct answer from its gold spelling.
pub fn normalize(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut pending_space = false;
    for c in s.trim().chars() {
        let c = if c == '-' { ' ' } else { c };
        if c.is_whitespace() {
            pending_space = true;
            continue;
        }
        if pending_space && !out.is_empty() {
            out.push(' ');
        }
        pending_space = false;
        for lower in c.to_lowercase() {
            out.push(lower);
        }
    }
    out
}

/// Jaro similarity over Unicode scalar values. Matching window is
/// `max(|a|,|b|)/2 - 1`; transpositions are half the positional
/// mismatches between the two matched sequences, rounded down.
pub fn jaro<T: Real>(s1: &str, s2: &str) -> T {
    if s1 == s2 {
        return T::one();
    }
    let a: Vec<char> = s1.chars().collect();
    let b: Vec<char> = s2.chars().collect();
    if a.is_empty() || b.is_empty() {
        return T::zero();
    }
    let window = (a.len().max(b.len()) / 2).saturating_sub(1);
    let mut b_taken = vec![false; b.len()];
    let mut a_matched = Vec::new();
    for (i, &ca) in a.iter().enumerate() {
        let lo = i.saturating_sub(window);
        let hi = (i + window + 1).min(b.len());
        for (j, slot) in b_taken.iter_mut().enumerate().take(hi).skip(lo) {
            if !*slot && b[j] == ca {
                *slot = true;
                a_matched.push(ca);
                break;
            }
        }
    }
    let m = a_matched.len();
    if m == 0 {
        return T::zero();
    }
    let b_matched = b.iter().zip(&b_taken).filter(|&(_, &taken)| taken);
    let mismatches = a_matched
        .iter()
        .zip(b_matched)
        .filter(|&(x, (y, _))| x != y)
        .count();
    let t = mismatches / 2;
    let m_f = T::from_count(m);
    (m_f / T::from_count(a.len()) + m_f / T::from_count(b.len()) + T::from_count(m - t) / m_f)
        / T::from_count(3)
}

/// Jaro plus the Winkler prefix boost `l * p * (1 - jaro)`, applied
/// unconditionally with the shared-prefix length `l` capped at
/// `config.max_prefix`.
pub fn jaro_winkler<T: Real>(s1: &str, s2: &str, config: &MatchConfig<T>) -> T {
    let base: T = jaro(s1, s2);
    let l = s1
        .chars()
        .zip(s2.chars())
        .take(config.max_prefix)
        .take_while(|(x, y)| x == y)
        .count();
    base + T::from_count(l) * config.prefix_scale * (T::one() - base)
}

/// One extracted answer's best match against the gold set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerMatch<T> {
    pub answer: String,
    /// Best similarity over the gold names still available when this
    /// answer was scored.
    pub best_score: T,
    /// The gold name consumed by this answer, if the best score cleared
    /// the threshold.
    pub matched_gold: Option<String>,
}

/// Precision@10 outcome for one question.
#[derive(Debug, Clone, PartialEq)]
pub struct Scored<T> {
    pub matches: Vec<AnswerMatch<T>>,
    pub matched_count: usize,
    /// matched_count / 10, denominator fixed.
    pub precision: T,
}

/// Score extracted answers against gold names. Answers are walked in
/// extraction order; each may consume at most one gold name (the best
/// still-unconsumed one at or above the threshold), and each gold name
/// satisfies at most one answer. Only the first ten answers count.
pub fn precision_at_10<T: Real>(
    extracted: &[String],
    gold: &[String],
    config: &MatchConfig<T>,
) -> Scored<T> {
    let gold_normalized: Vec<String> = gold.iter().map(|g| normalize(g)).collect();
    let mut consumed = vec![false; gold.len()];
    let mut matches = Vec::new();
    let mut matched_count = 0usize;
    for answer in extracted.iter().take(10) {
        let answer_normalized = normalize(answer);
        let mut best_score = T::zero();
        let mut best_index = None;
        for (i, g) in gold_normalized.iter().enumerate() {
            if consumed[i] {
                continue;
            }
            let score = jaro_winkler(&answer_normalized, g, config);
            if best_index.is_none() || score > best_score {
                best_score = score;
                best_index = Some(i);
            }
        }
        let matched_gold = match best_index {
            Some(i) if best_score >= config.threshold => {
                consumed[i] = true;
                matched_count += 1;
                Some(gold[i].clone())
            }
            _ => None,
        };
        matches.push(AnswerMatch { answer: answer.clone(), best_score, matched_gold });
    }
    Scored {
        matches,
        matched_count,
        precision: T::from_count(matched_count) / T::from_count(10),
    }
}

/// One scored question as persisted by the evaluation stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord<T> {
    pub question_id: String,
    pub pattern_index: usize,
    pub mode: String,
    pub raw_output: String,
    pub extracted: Vec<String>,
    pub gold: Vec<String>,
    pub matches: Vec<AnswerMatch<T>>,
    pub precision: T,
    /// Transport or API failure note; a failed question scores zero.
    pub error: Option<String>,
}

/// Mean and supporting count for one report cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell<T> {
    pub mean: T,
    pub count: usize,
}

/// Report breakdown: overall unweighted mean plus means by family,
/// depth, operation variety, and pattern.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate<T> {
    pub overall: Cell<T>,
    pub by_family: Vec<(Family, Cell<T>)>,
    pub by_depth: Vec<(usize, Cell<T>)>,
    pub by_variety: Vec<(usize, Cell<T>)>,
    pub by_pattern: Vec<(usize, Cell<T>)>,
}

fn mean_of<T: Real>(sum: T, count: usize) -> Cell<T> {
    Cell { mean: sum / T::from_count(count), count }
}

/// Fold records into report cells. Every record's pattern index must
/// exist in the catalog, which supplies family, depth, and variety.
pub fn aggregate<T: Real>(
    records: &[EvalRecord<T>],
    catalog: &Catalog,
) -> Result<Aggregate<T>, MetricsError> {
    if records.is_empty() {
        return Err(MetricsError::NoRecords);
    }
    let mut total = T::zero();
    let mut by_family: BTreeMap<Family, (T, usize)> = BTreeMap::new();
    let mut by_depth: BTreeMap<usize, (T, usize)> = BTreeMap::new();
    let mut by_variety: BTreeMap<usize, (T, usize)> = BTreeMap::new();
    let mut by_pattern: BTreeMap<usize, (T, usize)> = BTreeMap::new();
    for record in records {
        let pattern = catalog
            .get(record.pattern_index)
            .ok_or(MetricsError::UnknownPattern(record.pattern_index))?;
        total = total + record.precision;
        let f = by_family.entry(pattern.family).or_insert((T::zero(), 0));
        f.0 = f.0 + record.precision;
        f.1 += 1;
        let d = by_depth.entry(pattern.depth).or_insert((T::zero(), 0));
        d.0 = d.0 + record.precision;
        d.1 += 1;
        let v = by_variety.entry(pattern.variety).or_insert((T::zero(), 0));
        v.0 = v.0 + record.precision;
        v.1 += 1;
        let p = by_pattern.entry(pattern.index).or_insert((T::zero(), 0));
        p.0 = p.0 + record.precision;
        p.1 += 1;
    }
    fn collect<K: Ord, T: Real>(m: BTreeMap<K, (T, usize)>) -> Vec<(K, Cell<T>)> {
        m.into_iter().map(|(k, (sum, count))| (k, mean_of(sum, count))).collect()
    }
    Ok(Aggregate {
        overall: mean_of(total, records.len()),
        by_family: collect(by_family),
        by_depth: collect(by_depth),
        by_variety: collect(by_variety),
        by_pattern: collect(by_pattern),
    })
}

/// Composite-versus-parts comparison for a set-operation question: the
/// whole question's score against the size-weighted average of its two
/// sub-questions' scores.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SetOpResult<T> {
    pub sub_score_1: T,
    pub sub_score_2: T,
    pub gold_size_1: usize,
    pub gold_size_2: usize,
    pub weighted_before: T,
    pub after: T,
    /// weighted_before - after; negative when composition helped.
    pub drop: T,
}

pub fn set_op_test<T: Real>(
    sub_score_1: T,
    sub_score_2: T,
    gold_size_1: usize,
    gold_size_2: usize,
    after: T,
) -> Result<SetOpResult<T>, MetricsError> {
    let total = gold_size_1 + gold_size_2;
    if total == 0 {
        return Err(MetricsError::ZeroWeights);
    }
    let weighted_before = (T::from_count(gold_size_1) * sub_score_1
        + T::from_count(gold_size_2) * sub_score_2)
        / T::from_count(total);
    Ok(SetOpResult {
        sub_score_1,
        sub_score_2,
        gold_size_1,
        gold_size_2,
        weighted_before,
        after,
        drop: weighted_before - after,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Score;

    fn config() -> MatchConfig<Score> {
        MatchConfig::general()
    }

    #[test]
    fn jaro_reference_values() {
        assert_eq!(jaro::<Score>("identical", "identical"), 1.0);
        assert_eq!(jaro::<Score>("abc", "xyz"), 0.0);
        assert_eq!(jaro::<Score>("", ""), 1.0);
        assert_eq!(jaro::<Score>("", "abc"), 0.0);
        let martha: Score = jaro("MARTHA", "MARHTA");
        assert!((martha - 0.9444).abs() < 0.0001, "got {martha}");
    }

    #[test]
    fn jaro_is_symmetric() {
        for (a, b) in [("MARTHA", "MARHTA"), ("DIXON", "DICKSONX"), ("apple", "applesauce")] {
            let ab: Score = jaro(a, b);
            let ba: Score = jaro(b, a);
            assert!((ab - ba).abs() < 1e-12, "{a}/{b}: {ab} vs {ba}");
        }
    }

    #[test]
    fn jaro_winkler_reference_values() {
        let c = config();
        let martha: Score = jaro_winkler("MARTHA", "MARHTA", &c);
        assert!((martha - 0.9611).abs() < 0.0001, "got {martha}");
        assert_eq!(jaro_winkler::<Score>("same", "same", &c), 1.0);
        assert_eq!(jaro_winkler::<Score>("abc", "xyz", &c), 0.0);
    }

    #[test]
    fn winkler_boost_is_at_least_jaro_and_capped() {
        let c = config();
        for (a, b) in [("prefix", "prefall"), ("aaaaab", "aaaaac"), ("x", "y")] {
            let j: Score = jaro(a, b);
            let jw: Score = jaro_winkler(a, b, &c);
            assert!(jw >= j, "{a}/{b}");
            assert!(jw <= 1.0);
        }
        // Shared prefix of five characters only counts four.
        let j: Score = jaro("aaaaab", "aaaaac");
        let jw: Score = jaro_winkler("aaaaab", "aaaaac", &config());
        assert!(((j + 4.0 * 0.1 * (1.0 - j)) - jw).abs() < 1e-12);
    }

    #[test]
    fn config_validation_bounds() {
        assert!(config().validate().is_ok());
        assert!(MatchConfig::<Score>::biomedical().validate().is_ok());
        let bad = MatchConfig::<Score> { threshold: 0.0, ..config() };
        assert!(bad.validate().is_err());
        let bad = MatchConfig::<Score> { prefix_scale: 0.3, max_prefix: 4, ..config() };
        assert!(bad.validate().is_err(), "0.3 * 4 > 1 must be rejected");
    }

    #[test]
    fn profile_thresholds() {
        assert_eq!(MatchConfig::<Score>::for_profile(KgProfile::General).threshold, 0.90);
        assert_eq!(MatchConfig::<Score>::for_profile(KgProfile::Biomedical).threshold, 0.97);
    }

    #[test]
    fn normalization_absorbs_case_hyphens_whitespace() {
        assert_eq!(normalize("New-York"), "new york");
        assert_eq!(normalize("  Multiple   Spaces  "), "multiple spaces");
        assert_eq!(normalize("Co-operate-Now"), "co operate now");
        assert_eq!(normalize(""), "");
    }

    #[test]
    fn precision_counts_against_a_fixed_denominator() {
        let gold: Vec<String> = (0..10).map(|i| format!("entity number {i}")).collect();
        let scored = precision_at_10(&gold, &gold, &config());
        assert_eq!(scored.precision, 1.0);
        assert_eq!(scored.matched_count, 10);

        let three: Vec<String> = gold[..3].to_vec();
        let scored = precision_at_10(&three, &gold, &config());
        assert_eq!(scored.precision, 0.3);

        let scored = precision_at_10(&[], &gold, &config());
        assert_eq!(scored.precision, 0.0);
        assert!(scored.matches.is_empty());
    }

    #[test]
    fn fuzzy_matches_clear_the_threshold() {
        let gold = vec!["New-York".to_string()];
        let extracted = vec!["new york".to_string()];
        let scored = precision_at_10(&extracted, &gold, &config());
        assert_eq!(scored.matched_count, 1);
        assert_eq!(scored.matches[0].matched_gold.as_deref(), Some("New-York"));
        assert_eq!(scored.matches[0].best_score, 1.0);
    }

    #[test]
    fn each_gold_name_is_consumed_once() {
        let gold = vec!["Alpha".to_string()];
        let extracted = vec!["Alpha".to_string(), "Alpha".to_string()];
        let scored = precision_at_10(&extracted, &gold, &config());
        assert_eq!(scored.matched_count, 1);
        assert_eq!(scored.matches[1].matched_gold, None);
    }

    #[test]
    fn only_first_ten_answers_are_scored() {
        let gold: Vec<String> = (0..15).map(|i| format!("gold name {i}")).collect();
        let extracted = gold.clone();
        let scored = precision_at_10(&extracted, &gold, &config());
        assert_eq!(scored.matched_count, 10);
        assert_eq!(scored.matches.len(), 10);
        assert_eq!(scored.precision, 1.0);
    }

    #[test]
    fn below_threshold_best_match_is_still_reported() {
        let gold = vec!["completely different".to_string()];
        let extracted = vec!["zebra".to_string()];
        let scored = precision_at_10(&extracted, &gold, &config());
        assert_eq!(scored.matched_count, 0);
        assert!(scored.matches[0].best_score < 0.90);
        assert_eq!(scored.matches[0].matched_gold, None);
    }

    #[test]
    fn lower_threshold_never_matches_fewer() {
        let gold = vec!["Sylvester Stallone".into(), "Jason Statham".into(), "Jet Li".into()];
        let extracted = vec![
            "sylvester stalone".to_string(),
            "Jason Statham".to_string(),
            "Someone Else".to_string(),
        ];
        let strict = precision_at_10(&extracted, &gold, &MatchConfig::<Score>::biomedical());
        let loose = precision_at_10(&extracted, &gold, &config());
        assert!(loose.matched_count >= strict.matched_count);
    }

    #[test]
    fn gold_permutation_leaves_the_count_unchanged() {
        let gold = vec!["Paris".to_string(), "Berlin".to_string(), "Madrid".to_string()];
        let mut rotated = gold.clone();
        rotated.rotate_left(1);
        let extracted = vec!["berlin".to_string(), "madrid".to_string()];
        let a = precision_at_10(&extracted, &gold, &config());
        let b = precision_at_10(&extracted, &rotated, &config());
        assert_eq!(a.matched_count, b.matched_count);
    }

    fn record(pattern_index: usize, precision: Score) -> EvalRecord<Score> {
        EvalRecord {
            question_id: format!("q-{pattern_index}"),
            pattern_index,
            mode: "plain-2-shot".into(),
            raw_output: String::new(),
            extracted: vec![],
            gold: vec![],
            matches: vec![],
            precision,
            error: None,
        }
    }

    #[test]
    fn aggregate_means_by_every_axis() {
        let catalog = Catalog::builtin();
        let mut records = Vec::new();
        for pattern in catalog.patterns() {
            for _ in 0..4 {
                records.push(record(pattern.index, 0.5));
            }
        }
        let agg = aggregate(&records, &catalog).unwrap();
        assert_eq!(agg.overall.count, 26 * 4);
        assert!((agg.overall.mean - 0.5).abs() < 1e-12);
        assert_eq!(agg.by_family.len(), 4);
        for (_, cell) in &agg.by_family {
            assert!((cell.mean - 0.5).abs() < 1e-12);
        }
        assert_eq!(agg.by_depth.iter().map(|(d, _)| *d).collect::<Vec<_>>(), vec![1, 2, 3]);
        assert_eq!(
            agg.by_variety.iter().map(|(v, _)| *v).collect::<Vec<_>>(),
            vec![1, 2, 3, 4]
        );
        assert_eq!(agg.by_pattern.len(), 26);
    }

    #[test]
    fn overall_mean_is_the_record_mean() {
        let catalog = Catalog::builtin();
        let precisions = [0.0, 0.1, 0.4, 0.4, 0.7, 1.0];
        let records: Vec<_> =
            precisions.iter().map(|&p| record(0, p)).collect();
        let agg = aggregate(&records, &catalog).unwrap();
        let expected: Score = precisions.iter().sum::<Score>() / precisions.len() as Score;
        assert!((agg.overall.mean - expected).abs() < 1e-12);
    }

    #[test]
    fn aggregate_rejects_unknown_patterns_and_empty_input() {
        let catalog = Catalog::builtin();
        let records = vec![record(99, 0.5)];
        assert!(matches!(
            aggregate(&records, &catalog),
            Err(MetricsError::UnknownPattern(99))
        ));
        assert!(matches!(
            aggregate::<Score>(&[], &catalog),
            Err(MetricsError::NoRecords)
        ));
    }

    #[test]
    fn set_op_weighted_average() {
        let r = set_op_test::<Score>(0.5, 0.2, 10, 30, 0.275).unwrap();
        assert!((r.weighted_before - 0.275).abs() < 1e-12);
        assert!(r.drop.abs() < 1e-12);

        // Equal weights reduce to the plain mean.
        let r = set_op_test::<Score>(0.8, 0.4, 5, 5, 0.3).unwrap();
        assert!((r.weighted_before - 0.6).abs() < 1e-12);
        assert!((r.drop - 0.3).abs() < 1e-12);
    }

    #[test]
    fn set_op_drop_can_be_negative() {
        let r = set_op_test::<Score>(0.2, 0.2, 10, 10, 0.5).unwrap();
        assert!((r.drop + 0.3).abs() < 1e-12);
    }

    #[test]
    fn set_op_zero_weights_is_an_error() {
        assert!(matches!(
            set_op_test::<Score>(0.5, 0.5, 0, 0, 0.5),
            Err(MetricsError::ZeroWeights)
        ));
    }

    #[test]
    fn scoring_works_at_f32_too() {
        let gold = vec!["Paris".to_string()];
        let extracted = vec!["paris".to_string()];
        let scored = precision_at_10::<f32>(&extracted, &gold, &MatchConfig::general());
        assert_eq!(scored.precision, 0.1);
        let m: f32 = jaro("MARTHA", "MARHTA");
        assert!((m - 0.9444).abs() < 0.001);
    }
}
