//! Metrics and failure analysis over stored trajectories.

pub mod classify;
pub mod metrics;
pub mod report;
pub mod tables;
pub mod taxonomy;
pub mod wilson;

pub use classify::{classify_failure, classify_rule_based, ClassifyError, ClassifyMode, FailureClassification};
pub use metrics::{task_goal_completion, MetricsError, MetricsReport, RateSummary};
pub use report::{build_report, render_comparison, Report, ReportError, RunSummary};
pub use tables::{failure_shift, failure_table, FailureShift, FailureTable, FailureTableRow, ShiftRow};
pub use taxonomy::{FailureCategory, UnknownCategory};
pub use wilson::{wilson_from_rate, wilson_interval, WilsonError};
