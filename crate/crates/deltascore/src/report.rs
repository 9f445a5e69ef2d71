//! Correlation report rendering: a machine-readable JSON document and an
//! aligned-column text table with one row per metric and the five aspect
//! columns.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::eval::CorrelationReport;
use crate::perturb::Aspect;

/// A (metric, aspect) cell that could not be computed, with the reason.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedCell {
    pub metric: String,
    pub aspect: Aspect,
    pub reason: String,
}

/// Everything one correlate run produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDocument {
    pub dataset: String,
    pub reports: Vec<CorrelationReport>,
    pub skipped: Vec<SkippedCell>,
}

impl ReportDocument {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Aligned text table: rows are metrics, columns the five aspects,
    /// cells the absolute tau.
    pub fn to_table(&self) -> String {
        let mut cells: BTreeMap<(String, Aspect), f64> = BTreeMap::new();
        let mut metrics: Vec<String> = Vec::new();
        for report in &self.reports {
            if !metrics.contains(&report.metric) {
                metrics.push(report.metric.clone());
            }
            cells.insert((report.metric.clone(), report.aspect), report.abs_tau);
        }
        for skipped in &self.skipped {
            if !metrics.contains(&skipped.metric) {
                metrics.push(skipped.metric.clone());
            }
        }
        metrics.sort();

        let metric_width = metrics
            .iter()
            .map(String::len)
            .chain([std::cmp::max(6, self.dataset.len())])
            .max()
            .unwrap_or(6);
        let mut out = String::new();
        out.push_str(&format!("{:<metric_width$}", self.dataset));
        for aspect in Aspect::ALL {
            out.push_str(&format!("  {:>6}", aspect.short_label()));
        }
        out.push('\n');
        for metric in &metrics {
            out.push_str(&format!("{metric:<metric_width$}"));
            for aspect in Aspect::ALL {
                match cells.get(&(metric.clone(), aspect)) {
                    Some(abs_tau) => out.push_str(&format!("  {abs_tau:>6.3}")),
                    None => out.push_str(&format!("  {:>6}", "n/a")),
                }
            }
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(metric: &str, aspect: Aspect, tau: f64) -> CorrelationReport {
        CorrelationReport {
            metric: metric.to_string(),
            dataset: "toy".to_string(),
            aspect,
            tau,
            abs_tau: tau.abs(),
            n: 10,
            concordant: 30,
            discordant: 15,
            ties_x: 0,
            ties_y: 0,
            excluded: Vec::new(),
        }
    }

    #[test]
    fn table_has_metric_rows_and_aspect_columns() {
        let doc = ReportDocument {
            dataset: "toy".into(),
            reports: vec![
                report("jumble@0.9", Aspect::Fluency, -0.42),
                report("jumble@0.9", Aspect::Coherence, 0.37),
                report("typo@0.4", Aspect::Fluency, 0.21),
            ],
            skipped: vec![SkippedCell {
                metric: "typo@0.4".into(),
                aspect: Aspect::Coherence,
                reason: "insufficient data".into(),
            }],
        };
        let table = doc.to_table();
        let lines: Vec<&str> = table.lines().collect();
        assert_eq!(lines.len(), 3); // header + 2 metric rows
        for label in ["Flu.", "Coh.", "Rel.", "Log.", "Int."] {
            assert!(lines[0].contains(label));
        }
        assert!(lines[1].starts_with("jumble@0.9"));
        assert!(lines[1].contains("0.420")); // absolute value
        assert!(lines[2].starts_with("typo@0.4"));
        assert!(lines[2].contains("n/a"));
    }

    #[test]
    fn json_roundtrip() {
        let doc = ReportDocument {
            dataset: "toy".into(),
            reports: vec![report("jumble@0.9", Aspect::Logicality, 0.5)],
            skipped: Vec::new(),
        };
        let parsed: ReportDocument = serde_json::from_str(&doc.to_json()).unwrap();
        assert_eq!(parsed, doc);
    }
}
