use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{FailureCategory, FailureClassification};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureTableRow {
    pub category: FailureCategory,
    pub count: usize,
    /// Sum of classifier confidences for this category.
    pub confidence_weighted: f64,
}

/// Failure counts per primary category, most frequent first.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FailureTable {
    pub rows: Vec<FailureTableRow>,
}

fn by_count(a: &FailureTableRow, b: &FailureTableRow) -> Ordering {
    b.count
        .cmp(&a.count)
        .then(b.confidence_weighted.partial_cmp(&a.confidence_weighted).unwrap_or(Ordering::Equal))
        .then(a.category.cmp(&b.category))
}

impl FailureTable {
    /// A table with given counts and weights. Rows with a zero count are
    /// kept; categories not listed are absent.
    pub fn from_rows(rows: impl IntoIterator<Item = FailureTableRow>) -> Self {
        let mut rows: Vec<_> = rows.into_iter().collect();
        rows.sort_by(by_count);
        FailureTable { rows }
    }

    /// Counts only, with each weight equal to its count.
    pub fn from_counts(counts: &[(FailureCategory, usize)]) -> Self {
        Self::from_rows(counts.iter().map(|&(category, count)| FailureTableRow {
            category,
            count,
            confidence_weighted: count as f64,
        }))
    }

    pub fn total(&self) -> usize {
        self.rows.iter().map(|r| r.count).sum()
    }

    pub fn get(&self, category: FailureCategory) -> Option<&FailureTableRow> {
        self.rows.iter().find(|r| r.category == category)
    }

    /// Share of all failures, in percent. `None` if the category is absent.
    pub fn percent(&self, category: FailureCategory) -> Option<f64> {
        let total = self.total();
        self.get(category).map(|r| if total == 0 { 0.0 } else { 100.0 * r.count as f64 / total as f64 })
    }

    /// Weights rounded to two decimals, as they are printed.
    pub fn quantized(&self) -> Self {
        FailureTable {
            rows: self
                .rows
                .iter()
                .map(|r| FailureTableRow { confidence_weighted: round2(r.confidence_weighted), ..r.clone() })
                .collect(),
        }
    }
}

fn round2(x: f64) -> f64 {
    format!("{x:.2}").parse().expect("formatted float parses")
}

pub fn failure_table(cls: &[FailureClassification]) -> FailureTable {
    let mut rows: Vec<FailureTableRow> = vec![];
    for c in cls {
        match rows.iter_mut().find(|r| r.category == c.primary) {
            Some(r) => {
                r.count += 1;
                r.confidence_weighted += c.confidence;
            }
            None => rows.push(FailureTableRow { category: c.primary, count: 1, confidence_weighted: c.confidence }),
        }
    }
    FailureTable::from_rows(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftRow {
    pub category: FailureCategory,
    pub count_before: usize,
    pub pct_before: f64,
    pub count_after: usize,
    pub pct_after: f64,
    /// The category is a row of the table (as opposed to never occurring).
    pub in_before: bool,
    pub in_after: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureShift {
    pub total_before: usize,
    pub total_after: usize,
    pub rows: Vec<ShiftRow>,
}

/// Before/after comparison. Each side's percentages are over its own total.
pub fn failure_shift(before: &FailureTable, after: &FailureTable) -> FailureShift {
    let mut rows: Vec<ShiftRow> = FailureCategory::ALL
        .into_iter()
        .filter(|c| before.get(*c).is_some() || after.get(*c).is_some())
        .map(|c| ShiftRow {
            category: c,
            count_before: before.get(c).map_or(0, |r| r.count),
            pct_before: before.percent(c).unwrap_or(0.0),
            count_after: after.get(c).map_or(0, |r| r.count),
            pct_after: after.percent(c).unwrap_or(0.0),
            in_before: before.get(c).is_some(),
            in_after: after.get(c).is_some(),
        })
        .collect();
    rows.sort_by(|a, b| {
        b.in_before
            .cmp(&a.in_before)
            .then(b.count_before.cmp(&a.count_before))
            .then(b.count_after.cmp(&a.count_after))
            .then(a.category.cmp(&b.category))
    });
    FailureShift { total_before: before.total(), total_after: after.total(), rows }
}

/// One decimal, the precision of every printed rate.
pub fn pct1(x: f64) -> String {
    format!("{x:.1}")
}

const LABEL_WIDTH: usize = 36;

pub fn render_failure_table(t: &FailureTable) -> String {
    let mut s = format!("{:<LABEL_WIDTH$} {:>6} {:>6} {:>14}\n", "Failure category", "Count", "%", "Conf.-weighted");
    for r in &t.rows {
        s.push_str(&format!(
            "{:<LABEL_WIDTH$} {:>6} {:>6} {:>14.2}\n",
            r.category.label(),
            r.count,
            pct1(t.percent(r.category).unwrap_or(0.0)),
            r.confidence_weighted
        ));
    }
    s.push_str(&format!("{:<LABEL_WIDTH$} {:>6}\n", "Total", t.total()));
    s
}

pub fn render_shift(shift: &FailureShift, before_title: &str, after_title: &str) -> String {
    let mut s = format!(
        "{:<LABEL_WIDTH$} {:>16} {:>6} {:>16} {:>6}\n",
        "Failure category",
        truncate(before_title, 16),
        "%",
        truncate(after_title, 16),
        "%"
    );
    for r in &shift.rows {
        let side = |present: bool, n: usize, p: f64| {
            if present {
                (n.to_string(), pct1(p))
            } else {
                ("---".to_string(), "---".to_string())
            }
        };
        let (bn, bp) = side(r.in_before, r.count_before, r.pct_before);
        let (an, ap) = side(r.in_after, r.count_after, r.pct_after);
        s.push_str(&format!("{:<LABEL_WIDTH$} {bn:>16} {bp:>6} {an:>16} {ap:>6}\n", r.category.short_label()));
    }
    s.push_str(&format!("{:<LABEL_WIDTH$} {:>16} {:>6} {:>16}\n", "Total", shift.total_before, "", shift.total_after));
    s
}

fn truncate(s: &str, n: usize) -> String {
    s.chars().take(n).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {message}")]
pub struct TableParseError {
    pub line: usize,
    pub message: String,
}

/// Reads back [`render_failure_table`] output. Weights come back rounded
/// to two decimals.
pub fn parse_failure_table(text: &str) -> Result<FailureTable, TableParseError> {
    let mut rows = vec![];
    for (i, line) in text.lines().enumerate().skip(1) {
        let err = |message: String| TableParseError { line: i + 1, message };
        if line.starts_with("Total") || line.trim().is_empty() {
            continue;
        }
        if line.len() < LABEL_WIDTH {
            return Err(err("row too short".into()));
        }
        let (label, rest) = line.split_at(LABEL_WIDTH);
        let category = FailureCategory::parse_label(label.trim()).map_err(|e| err(e.to_string()))?;
        let cols: Vec<&str> = rest.split_whitespace().collect();
        let [count, _pct, weighted] = cols.as_slice() else {
            return Err(err(format!("expected 3 columns, found {}", cols.len())));
        };
        rows.push(FailureTableRow {
            category,
            count: count.parse().map_err(|e| err(format!("count: {e}")))?,
            confidence_weighted: weighted.parse().map_err(|e| err(format!("weight: {e}")))?,
        });
    }
    Ok(FailureTable { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use FailureCategory::*;

    fn cls(primary: FailureCategory, confidence: f64) -> FailureClassification {
        FailureClassification { task_id: "t".into(), primary, secondary: None, confidence, evidence: "e".into() }
    }

    #[test]
    fn weighted_sums() {
        // 45 at 0.855 and one at 0.975 sum to the printed 39.45
        let mut v: Vec<_> = (0..45).map(|_| cls(AuthCredentials, 0.855)).collect();
        v.push(cls(AuthCredentials, 0.975));
        let t = failure_table(&v);
        assert_eq!(t.rows[0].count, 46);
        assert_eq!(format!("{:.2}", t.rows[0].confidence_weighted), "39.45");
        assert!(failure_table(&[]).rows.is_empty());
        let ones = failure_table(&[cls(Other, 1.0), cls(Other, 1.0), cls(ContextLength, 1.0)]);
        assert!(ones.rows.iter().all(|r| r.confidence_weighted == r.count as f64));
    }

    #[test]
    fn shift_of_identical_tables() {
        let t = FailureTable::from_counts(&[(Other, 3), (AuthCredentials, 5)]);
        let s = failure_shift(&t, &t);
        assert!(s.rows.iter().all(|r| r.count_before == r.count_after && r.pct_before == r.pct_after));
    }

    #[test]
    fn absent_before() {
        let s = failure_shift(&FailureTable::from_counts(&[(Other, 1)]), &FailureTable::from_counts(&[(ToolingRuntime, 2)]));
        let row = s.rows.iter().find(|r| r.category == ToolingRuntime).unwrap();
        assert_eq!((row.count_before, row.in_before), (0, false));
        assert!(render_shift(&s, "Before", "After").contains("---"));
    }

    fn table_strategy() -> impl Strategy<Value = FailureTable> {
        proptest::collection::btree_map(0usize..10, (0usize..500, 0u32..50_000), 0..10).prop_map(|m| {
            FailureTable::from_rows(m.into_iter().map(|(i, (count, w))| FailureTableRow {
                category: FailureCategory::ALL[i],
                count,
                confidence_weighted: w as f64 / 100.0,
            }))
        })
    }

    proptest! {
        #[test]
        fn render_parse_round_trip(t in table_strategy()) {
            prop_assert_eq!(parse_failure_table(&render_failure_table(&t)).unwrap(), t.quantized());
        }

        #[test]
        fn percentages_sum_to_100(t in table_strategy()) {
            let total: f64 = t.rows.iter().filter_map(|r| t.percent(r.category)).sum();
            prop_assert!(t.total() == 0 || (total - 100.0).abs() < 1e-9);
            let printed: f64 = t.rows.iter().map(|r| pct1(t.percent(r.category).unwrap()).parse::<f64>().unwrap()).sum();
            prop_assert!(t.total() == 0 || (printed - 100.0).abs() <= 0.05 * t.rows.len() as f64 + 1e-9);
        }
    }
}
