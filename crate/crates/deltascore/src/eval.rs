//! Meta-evaluation harness: ingest rated stories, aggregate annotator
//! scores, and compute story-level Kendall correlations between a metric's
//! scores and the aggregated human ratings.
//!
//! Human ratings on a 5-point scale are heavily tied, so the tie-corrected
//! tau-b is used throughout. Aggregation across annotators is the
//! arithmetic mean.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::perturb::Aspect;
use crate::text::ConditionedStory;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot read dataset {path}: {message}")]
    Io { path: String, message: String },
    #[error("dataset {path}: {} schema violation(s), first {}:\n{}", violations.len(), shown.len(), shown.join("\n"))]
    Schema {
        path: String,
        violations: Vec<String>,
        shown: Vec<String>,
    },
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("correlation undefined: a list is fully tied")]
    UndefinedCorrelation,
    #[error("insufficient data: only {usable} usable stories (need >= 2)")]
    InsufficientData { usable: usize },
    #[error(transparent)]
    Ingest(#[from] IngestError),
}

/// A story with its per-aspect ordinal ratings (1..=5, one per annotator).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatedStory {
    #[serde(flatten)]
    pub story: ConditionedStory,
    #[serde(default)]
    pub ratings: BTreeMap<Aspect, Vec<u8>>,
}

impl RatedStory {
    fn validate(&self) -> Result<(), String> {
        if self.story.id.is_empty() {
            return Err("field 'id' is empty".into());
        }
        if self.story.story.trim().is_empty() {
            return Err("field 'story' is empty".into());
        }
        for (aspect, scores) in &self.ratings {
            if scores.is_empty() {
                return Err(format!("aspect '{aspect}' has no annotator ratings"));
            }
            for &score in scores {
                if !(1..=5).contains(&score) {
                    return Err(format!(
                        "aspect '{aspect}' rating {score} outside the 1..=5 ordinal scale"
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Load and validate a JSON Lines dataset. Malformed lines are reported
/// with their line numbers; duplicate ids are rejected; the error shows at
/// most the first 10 offending lines.
pub fn ingest_dataset(path: &Path) -> Result<Vec<RatedStory>, IngestError> {
    let raw = fs::read_to_string(path).map_err(|e| IngestError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    ingest_str(&raw, &path.display().to_string())
}

pub fn ingest_str(raw: &str, source: &str) -> Result<Vec<RatedStory>, IngestError> {
    let mut stories = Vec::new();
    let mut violations = Vec::new();
    let mut seen_ids = BTreeSet::new();
    for (i, line) in raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<RatedStory>(line) {
            Ok(record) => {
                if let Err(problem) = record.validate() {
                    violations.push(format!("line {}: {problem}", i + 1));
                    continue;
                }
                if !seen_ids.insert(record.story.id.clone()) {
                    violations.push(format!("line {}: duplicate id '{}'", i + 1, record.story.id));
                    continue;
                }
                stories.push(record);
            }
            Err(e) => violations.push(format!("line {}: {e}", i + 1)),
        }
    }
    if !violations.is_empty() {
        let shown = violations.iter().take(10).cloned().collect();
        return Err(IngestError::Schema {
            path: source.to_string(),
            violations,
            shown,
        });
    }
    Ok(stories)
}

/// Mean annotator score per aspect.
pub fn aggregate_ratings(rated: &RatedStory) -> BTreeMap<Aspect, f64> {
    rated
        .ratings
        .iter()
        .map(|(&aspect, scores)| {
            let mean = scores.iter().map(|&s| f64::from(s)).sum::<f64>() / scores.len() as f64;
            (aspect, mean)
        })
        .collect()
}

/// Pair classification counts behind a tau-b value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TauResult {
    pub tau: f64,
    pub concordant: u64,
    pub discordant: u64,
    /// Pairs tied in x (including pairs tied in both).
    pub ties_x: u64,
    /// Pairs tied in y (including pairs tied in both).
    pub ties_y: u64,
    pub pairs: u64,
}

/// Tie-corrected Kendall tau-b:
/// `(C - D) / sqrt((P - Tx) * (P - Ty))` with `P = n(n-1)/2`.
pub fn kendall_tau(xs: &[f64], ys: &[f64]) -> Result<TauResult, EvalError> {
    if xs.len() != ys.len() {
        return Err(EvalError::InvalidInput(format!(
            "length mismatch: {} vs {}",
            xs.len(),
            ys.len()
        )));
    }
    let n = xs.len();
    if n < 2 {
        return Err(EvalError::InvalidInput(format!(
            "need at least 2 observations, got {n}"
        )));
    }
    let mut concordant = 0u64;
    let mut discordant = 0u64;
    let mut ties_x = 0u64;
    let mut ties_y = 0u64;
    for i in 0..n {
        for j in (i + 1)..n {
            let dx = xs[i] - xs[j];
            let dy = ys[i] - ys[j];
            if dx == 0.0 {
                ties_x += 1;
            }
            if dy == 0.0 {
                ties_y += 1;
            }
            if dx == 0.0 || dy == 0.0 {
                continue;
            }
            if (dx > 0.0) == (dy > 0.0) {
                concordant += 1;
            } else {
                discordant += 1;
            }
        }
    }
    let pairs = (n * (n - 1) / 2) as u64;
    if ties_x == pairs || ties_y == pairs {
        return Err(EvalError::UndefinedCorrelation);
    }
    let tau = (concordant as f64 - discordant as f64)
        / (((pairs - ties_x) as f64) * ((pairs - ties_y) as f64)).sqrt();
    Ok(TauResult {
        tau,
        concordant,
        discordant,
        ties_x,
        ties_y,
        pairs,
    })
}

/// Story-level correlation of one metric against one aspect's ratings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub metric: String,
    pub dataset: String,
    pub aspect: Aspect,
    pub tau: f64,
    pub abs_tau: f64,
    /// Stories actually correlated.
    pub n: usize,
    pub concordant: u64,
    pub discordant: u64,
    pub ties_x: u64,
    pub ties_y: u64,
    /// Ids excluded because their score or rating was missing.
    pub excluded: Vec<String>,
}

/// Correlate metric scores against aggregated ratings for one aspect.
/// A story is excluded (and listed) iff its score or its rating for the
/// aspect is missing.
pub fn correlate(
    scores: &BTreeMap<String, f64>,
    rated: &[RatedStory],
    aspect: Aspect,
    metric: &str,
    dataset: &str,
) -> Result<CorrelationReport, EvalError> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut excluded = Vec::new();
    for story in rated {
        let rating = aggregate_ratings(story).get(&aspect).copied();
        match (scores.get(&story.story.id), rating) {
            (Some(&score), Some(rating)) => {
                xs.push(score);
                ys.push(rating);
            }
            _ => excluded.push(story.story.id.clone()),
        }
    }
    if xs.len() < 2 {
        return Err(EvalError::InsufficientData { usable: xs.len() });
    }
    let tau = kendall_tau(&xs, &ys)?;
    Ok(CorrelationReport {
        metric: metric.to_string(),
        dataset: dataset.to_string(),
        aspect,
        tau: tau.tau,
        abs_tau: tau.tau.abs(),
        n: xs.len(),
        concordant: tau.concordant,
        discordant: tau.discordant,
        ties_x: tau.ties_x,
        ties_y: tau.ties_y,
        excluded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rated(id: &str, ratings: &[(Aspect, &[u8])]) -> RatedStory {
        RatedStory {
            story: ConditionedStory::new(id, "c", "a story .").unwrap(),
            ratings: ratings
                .iter()
                .map(|&(aspect, scores)| (aspect, scores.to_vec()))
                .collect(),
        }
    }

    #[test]
    fn ingest_happy_path() {
        let raw = concat!(
            r#"{"id":"s1","condition":"t","story":"a .","ratings":{"fluency":[3,4,5]}}"#,
            "\n",
            r#"{"id":"s2","condition":"t","story":"b .","system":"gpt","ratings":{"fluency":[2]}}"#,
            "\n",
        );
        let stories = ingest_str(raw, "test").unwrap();
        assert_eq!(stories.len(), 2);
        assert_eq!(stories[1].story.system.as_deref(), Some("gpt"));
    }

    #[test]
    fn ingest_rejects_out_of_range_rating() {
        let raw = r#"{"id":"s1","condition":"t","story":"a .","ratings":{"fluency":[6]}}"#;
        match ingest_str(raw, "test") {
            Err(IngestError::Schema { violations, .. }) => {
                assert!(violations[0].contains("fluency"));
                assert!(violations[0].contains('6'));
            }
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn ingest_rejects_duplicates_and_reports_line_numbers() {
        let raw = concat!(
            r#"{"id":"s1","condition":"","story":"a .","ratings":{}}"#,
            "\n",
            "garbage\n",
            r#"{"id":"s1","condition":"","story":"b .","ratings":{}}"#,
            "\n",
        );
        match ingest_str(raw, "test") {
            Err(IngestError::Schema { violations, .. }) => {
                assert_eq!(violations.len(), 2);
                assert!(violations[0].starts_with("line 2:"));
                assert!(violations[1].contains("duplicate id 's1'"));
            }
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn ingest_shows_at_most_ten_violations() {
        let mut raw = String::new();
        for _ in 0..15 {
            raw.push_str("bad line\n");
        }
        match ingest_str(&raw, "test") {
            Err(IngestError::Schema { violations, shown, .. }) => {
                assert_eq!(violations.len(), 15);
                assert_eq!(shown.len(), 10);
            }
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn aggregate_is_the_mean() {
        let story = rated("s1", &[(Aspect::Fluency, &[3, 4, 5]), (Aspect::Coherence, &[2])]);
        let means = aggregate_ratings(&story);
        assert_eq!(means[&Aspect::Fluency], 4.0);
        assert_eq!(means[&Aspect::Coherence], 2.0);
    }

    #[test]
    fn tau_perfect_concordance_and_discordance() {
        let xs = [1.0, 2.0, 3.0];
        assert_eq!(kendall_tau(&xs, &xs).unwrap().tau, 1.0);
        let ys = [3.0, 2.0, 1.0];
        let r = kendall_tau(&xs, &ys).unwrap();
        assert_eq!(r.tau, -1.0);
        assert_eq!(r.tau.abs(), 1.0);
    }

    #[test]
    fn tau_rejects_degenerate_inputs() {
        assert!(matches!(
            kendall_tau(&[1.0, 2.0], &[1.0]),
            Err(EvalError::InvalidInput(_))
        ));
        assert!(matches!(
            kendall_tau(&[1.0], &[1.0]),
            Err(EvalError::InvalidInput(_))
        ));
        assert!(matches!(
            kendall_tau(&[2.0, 2.0, 2.0], &[1.0, 2.0, 3.0]),
            Err(EvalError::UndefinedCorrelation)
        ));
    }

    #[test]
    fn tau_with_ties_matches_hand_computation() {
        // xs: ties on (0,1); ys: ties on (2,3)
        let xs = [1.0, 1.0, 2.0, 3.0];
        let ys = [1.0, 2.0, 3.0, 3.0];
        // P = 6; Tx = 1; Ty = 1
        // pairs: (0,1) tx; (0,2) C; (0,3) C; (1,2) C; (1,3) C; (2,3) ty
        // tau = 4 / sqrt(5 * 5) = 0.8
        let r = kendall_tau(&xs, &ys).unwrap();
        assert_eq!(r.concordant, 4);
        assert_eq!(r.discordant, 0);
        assert_eq!(r.ties_x, 1);
        assert_eq!(r.ties_y, 1);
        assert!((r.tau - 0.8).abs() < 1e-15);
    }

    #[test]
    fn correlate_excludes_and_counts_missing() {
        let stories = vec![
            rated("s1", &[(Aspect::Fluency, &[1])]),
            rated("s2", &[(Aspect::Fluency, &[3])]),
            rated("s3", &[(Aspect::Fluency, &[5])]),
            rated("s4", &[(Aspect::Coherence, &[2])]), // no fluency rating
        ];
        let scores: BTreeMap<String, f64> = [("s1", 0.1), ("s2", 0.5), ("s3", 0.9)]
            .into_iter()
            .map(|(id, s)| (id.to_string(), s))
            .collect(); // s4 unscored too
        let report = correlate(&scores, &stories, Aspect::Fluency, "m", "d").unwrap();
        assert_eq!(report.n, 3);
        assert_eq!(report.excluded, vec!["s4".to_string()]);
        assert_eq!(report.abs_tau, 1.0);
    }

    #[test]
    fn correlate_needs_two_usable() {
        let stories = vec![rated("s1", &[(Aspect::Fluency, &[1])])];
        let scores: BTreeMap<String, f64> = [("s1".to_string(), 0.3)].into_iter().collect();
        assert!(matches!(
            correlate(&scores, &stories, Aspect::Fluency, "m", "d"),
            Err(EvalError::InsufficientData { usable: 1 })
        ));
    }

    proptest! {
        // symmetric under swapping the lists; antisymmetric under negation
        #[test]
        fn tau_symmetries(pairs in proptest::collection::vec((0u8..6, 0u8..6), 5..40)) {
            let xs: Vec<f64> = pairs.iter().map(|p| f64::from(p.0)).collect();
            let ys: Vec<f64> = pairs.iter().map(|p| f64::from(p.1)).collect();
            let Ok(forward) = kendall_tau(&xs, &ys) else { return Ok(()); };
            let swapped = kendall_tau(&ys, &xs).unwrap();
            prop_assert!((forward.tau - swapped.tau).abs() < 1e-12);
            let negated_ys: Vec<f64> = ys.iter().map(|y| -y).collect();
            let negated = kendall_tau(&xs, &negated_ys).unwrap();
            prop_assert!((forward.tau + negated.tau).abs() < 1e-12);
        }

        // invariant under strictly increasing transforms of either list
        #[test]
        fn tau_invariant_under_monotone_transform(
            pairs in proptest::collection::vec((0u8..6, 0u8..6), 5..30),
            scale in 0.1f64..10.0,
            shift in -5.0f64..5.0,
        ) {
            let xs: Vec<f64> = pairs.iter().map(|p| f64::from(p.0)).collect();
            let ys: Vec<f64> = pairs.iter().map(|p| f64::from(p.1)).collect();
            let Ok(base) = kendall_tau(&xs, &ys) else { return Ok(()); };
            // x -> exp(scale * x) + shift is strictly increasing
            let mapped: Vec<f64> = xs.iter().map(|x| (scale * x).exp() + shift).collect();
            let transformed = kendall_tau(&mapped, &ys).unwrap();
            prop_assert!((base.tau - transformed.tau).abs() < 1e-12);
        }
    }
}
