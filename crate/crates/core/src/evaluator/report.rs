use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{ConfigLabel, TrajectoryRecord};

use super::classify::{classify_failure, ClassifyError, ClassifyMode, FailureClassification};
use super::metrics::{task_goal_completion, MetricsError, MetricsReport};
use super::tables::{failure_shift, failure_table, pct1, render_failure_table, render_shift, FailureShift, FailureTable};
use super::FailureCategory;

/// Everything derived from one run (one configuration over a task list).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub metrics: MetricsReport,
    pub classifications: Vec<FailureClassification>,
    pub failures: FailureTable,
    /// Most frequent primary categories per difficulty, up to three.
    pub top_by_difficulty: BTreeMap<u8, Vec<(FailureCategory, usize)>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub runs: Vec<RunSummary>,
    /// First run against last, when there are at least two.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shift: Option<FailureShift>,
}

#[derive(Debug, Error)]
pub enum ReportError {
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Classify(#[from] ClassifyError),
    #[error("report json: {0}")]
    Json(#[from] serde_json::Error),
}

pub fn summarize_run(records: &[TrajectoryRecord], mode: ClassifyMode<'_>) -> Result<RunSummary, ReportError> {
    let metrics = task_goal_completion(records)?;
    let mut classifications = vec![];
    let mut by_diff: BTreeMap<u8, Vec<FailureClassification>> = BTreeMap::new();
    for r in records.iter().filter(|r| !r.succeeded()) {
        let c = classify_failure(r, mode)?;
        by_diff.entry(r.difficulty).or_default().push(c.clone());
        classifications.push(c);
    }
    let top_by_difficulty = by_diff
        .into_iter()
        .map(|(d, cls)| (d, failure_table(&cls).rows.iter().take(3).map(|r| (r.category, r.count)).collect()))
        .collect();
    Ok(RunSummary { failures: failure_table(&classifications), metrics, classifications, top_by_difficulty })
}

pub fn build_report(runs: &[Vec<TrajectoryRecord>], mode: ClassifyMode<'_>) -> Result<Report, ReportError> {
    let runs = runs.iter().map(|r| summarize_run(r, mode)).collect::<Result<Vec<_>, _>>()?;
    let shift = match runs.as_slice() {
        [first, .., last] => Some(failure_shift(&first.failures, &last.failures)),
        _ => None,
    };
    Ok(Report { runs, shift })
}

/// Rates side by side, one column per run: aggregate (with the Wilson
/// interval) and one row per difficulty.
pub fn render_comparison(metrics: &[MetricsReport]) -> String {
    let mut diffs: Vec<u8> = metrics.iter().flat_map(|m| m.per_difficulty.keys().copied()).collect();
    diffs.sort_unstable();
    diffs.dedup();
    let mut s = format!("{:<14}", "Difficulty");
    for m in metrics {
        s.push_str(&format!(" {:>22}", m.config_label.title()));
    }
    s.push('\n');
    s.push_str(&format!("{:<14}", "Aggregate"));
    for m in metrics {
        let a = &m.aggregate;
        let cell = format!("{} [{}, {}]", pct1(a.percent()), pct1(a.wilson_lo * 100.0), pct1(a.wilson_hi * 100.0));
        s.push_str(&format!(" {cell:>22}"));
    }
    s.push('\n');
    for d in diffs {
        s.push_str(&format!("{:<14}", format!("Difficulty {d}")));
        for m in metrics {
            let cell = m.per_difficulty.get(&d).map_or("-".to_string(), |r| pct1(r.percent()));
            s.push_str(&format!(" {cell:>22}"));
        }
        s.push('\n');
    }
    s
}

impl Report {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ReportError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn render_text(&self) -> String {
        let metrics: Vec<MetricsReport> = self.runs.iter().map(|r| r.metrics.clone()).collect();
        let mut s = String::from("Task goal completion (%), 95% Wilson interval on the aggregate\n");
        s.push_str(&render_comparison(&metrics));
        for run in &self.runs {
            let a = &run.metrics.aggregate;
            s.push_str(&format!(
                "\nFailures: {} ({} of {} tasks failed)\n",
                run.metrics.config_label,
                a.n - a.k,
                a.n
            ));
            s.push_str(&render_failure_table(&run.failures));
            if !run.top_by_difficulty.is_empty() {
                s.push_str("Top failure categories by difficulty\n");
                for (d, top) in &run.top_by_difficulty {
                    for (c, n) in top {
                        s.push_str(&format!("  {d}  {:<32} {n:>4}\n", c.short_label()));
                    }
                }
            }
        }
        if let (Some(shift), [first, .., last]) = (&self.shift, self.runs.as_slice()) {
            s.push_str(&format!("\nFailure shift: {} -> {}\n", first.metrics.config_label, last.metrics.config_label));
            s.push_str(&render_shift(shift, first.metrics.config_label.as_str(), last.metrics.config_label.as_str()));
        }
        s
    }

    /// Flat CSV: one metrics row per scope and one failure row per category.
    pub fn render_csv(&self) -> String {
        let mut s = String::from("config_label,kind,key,k,n,rate,wilson_lo,wilson_hi,count,percent,confidence_weighted\n");
        for run in &self.runs {
            let label = run.metrics.config_label;
            let mut scopes = vec![("aggregate".to_string(), run.metrics.aggregate)];
            scopes.extend(run.metrics.per_difficulty.iter().map(|(d, r)| (format!("difficulty_{d}"), *r)));
            for (key, r) in scopes {
                s.push_str(&format!(
                    "{label},metrics,{key},{},{},{:.6},{:.6},{:.6},,,\n",
                    r.k, r.n, r.rate, r.wilson_lo, r.wilson_hi
                ));
            }
            for row in &run.failures.rows {
                s.push_str(&format!(
                    "{label},failure,{},,,,,,{},{:.1},{:.2}\n",
                    row.category.id(),
                    row.count,
                    run.failures.percent(row.category).unwrap_or(0.0),
                    row.confidence_weighted
                ));
            }
        }
        s
    }

    pub fn labels(&self) -> Vec<ConfigLabel> {
        self.runs.iter().map(|r| r.metrics.config_label).collect()
    }
}
