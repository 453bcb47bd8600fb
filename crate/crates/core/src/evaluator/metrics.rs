use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{ConfigLabel, TrajectoryRecord};

use super::wilson::wilson_interval;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateSummary {
    pub k: u64,
    pub n: u64,
    pub rate: f64,
    pub wilson_lo: f64,
    pub wilson_hi: f64,
}

impl RateSummary {
    /// 95% Wilson summary of `k` out of `n` (n >= 1).
    pub fn new(k: u64, n: u64) -> Self {
        let (wilson_lo, wilson_hi) = wilson_interval(k, n, 0.95).expect("k <= n and n >= 1");
        RateSummary { k, n, rate: k as f64 / n as f64, wilson_lo, wilson_hi }
    }

    pub fn percent(&self) -> f64 {
        self.rate * 100.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub config_label: ConfigLabel,
    pub aggregate: RateSummary,
    pub per_difficulty: BTreeMap<u8, RateSummary>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("no trajectories to score")]
    Empty,
    #[error("task `{0}` appears more than once; task goal completion is pass@1")]
    DuplicateTask(String),
    #[error("trajectories from several configurations ({0}) cannot be scored together")]
    MixedLabels(String),
}

/// Task goal completion: the share of tasks whose goal state was reached,
/// per difficulty and overall.
pub fn task_goal_completion(records: &[TrajectoryRecord]) -> Result<MetricsReport, MetricsError> {
    let first = records.first().ok_or(MetricsError::Empty)?;
    let labels: BTreeSet<ConfigLabel> = records.iter().map(|r| r.config_label).collect();
    if labels.len() > 1 {
        let names: Vec<&str> = labels.iter().map(|l| l.as_str()).collect();
        return Err(MetricsError::MixedLabels(names.join(", ")));
    }
    let mut seen = BTreeSet::new();
    let mut by_diff: BTreeMap<u8, (u64, u64)> = BTreeMap::new();
    for r in records {
        if !seen.insert(r.task_id.as_str()) {
            return Err(MetricsError::DuplicateTask(r.task_id.clone()));
        }
        let e = by_diff.entry(r.difficulty).or_default();
        e.0 += u64::from(r.succeeded());
        e.1 += 1;
    }
    let k = by_diff.values().map(|v| v.0).sum();
    Ok(MetricsReport {
        config_label: first.config_label,
        aggregate: RateSummary::new(k, records.len() as u64),
        per_difficulty: by_diff.into_iter().map(|(d, (k, n))| (d, RateSummary::new(k, n))).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::TaskSpec;

    pub(crate) fn records(label: ConfigLabel, split: &[(u8, u64, u64)]) -> Vec<TrajectoryRecord> {
        let mut out = vec![];
        for &(d, k, n) in split {
            for i in 0..n {
                let task = TaskSpec { task_id: format!("d{d}-{i}"), instruction: String::new(), difficulty: d, max_turns: 1 };
                let mut r = TrajectoryRecord::empty(&task, label, 100);
                r.reward = u8::from(i < k);
                out.push(r);
            }
        }
        out
    }

    #[test]
    fn aggregate_and_split() {
        // 57 / 48 / 63 tasks per difficulty; 15 + 0 + 0 successes
        let recs = records(ConfigLabel::FullScaffold, &[(1, 15, 57), (2, 0, 48), (3, 0, 63)]);
        let m = task_goal_completion(&recs).unwrap();
        assert_eq!((m.aggregate.k, m.aggregate.n), (15, 168));
        assert_eq!(format!("{:.1}", m.aggregate.percent()), "8.9");
        assert_eq!(format!("{:.1}", m.per_difficulty[&1].percent()), "26.3");
    }

    #[test]
    fn all_failures() {
        let m = task_goal_completion(&records(ConfigLabel::Baseline, &[(1, 0, 5)])).unwrap();
        assert_eq!((m.aggregate.rate, m.aggregate.wilson_lo), (0.0, 0.0));
    }

    #[test]
    fn errors() {
        assert_eq!(task_goal_completion(&[]), Err(MetricsError::Empty));
        let mut recs = records(ConfigLabel::Baseline, &[(1, 0, 2)]);
        recs[1].task_id = recs[0].task_id.clone();
        assert!(matches!(task_goal_completion(&recs), Err(MetricsError::DuplicateTask(_))));
        let mut recs = records(ConfigLabel::Baseline, &[(1, 0, 2)]);
        recs[1].config_label = ConfigLabel::FullScaffold;
        assert!(matches!(task_goal_completion(&recs), Err(MetricsError::MixedLabels(_))));
    }
}
