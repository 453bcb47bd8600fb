use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::ErrorKind;
use crate::evaluator::FailureCategory;
use crate::summarizer::SummaryOutcome;
use crate::transcript::PreservedArtifact;

use super::{ConfigLabel, TaskSpec};

/// Bumped whenever the record layout changes incompatibly.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminationCause {
    Completed,
    MaxTurns,
    EnvironmentError,
    GatewayError,
}

/// Tier invocations within a step, in the order they happened.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepEvent {
    Summarize,
    Propose,
    Correct,
    Execute,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SummaryEvent {
    pub source_span: (u64, u64),
    pub outcome: SummaryOutcome,
    pub chars_before: usize,
    pub chars_after: usize,
    pub preserved: Vec<PreservedArtifact>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorrectionEvent {
    pub category: Option<FailureCategory>,
    pub fallback: bool,
    pub attempts: u32,
    pub changed: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepRecord {
    pub turn: u32,
    /// What the agent saw last before proposing.
    pub observation: String,
    /// The agent's code, absent if its reply had no usable code block.
    pub proposed_code: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub proposal_error: Option<String>,
    /// The code sent to the environment (equal to `proposed_code` when the
    /// corrector is off).
    pub corrected_code: Option<String>,
    pub exec_output: String,
    pub exec_ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_kind: Option<ErrorKind>,
    pub summarized: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub summary: Option<SummaryEvent>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correction: Option<CorrectionEvent>,
    pub events: Vec<StepEvent>,
    #[serde(default)]
    pub api_calls: Vec<String>,
    #[serde(default)]
    pub finish_reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub schema_version: u32,
    pub task_id: String,
    pub difficulty: u8,
    pub max_turns: u32,
    pub config_label: ConfigLabel,
    pub seed: u64,
    pub steps: Vec<StepRecord>,
    pub reward: u8,
    pub checks_passed: usize,
    pub checks_total: usize,
    pub termination_cause: TerminationCause,
    /// The final agent request exceeded the model context budget, or a
    /// completion was cut off for length.
    pub context_overflow: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl TrajectoryRecord {
    pub fn empty(task: &TaskSpec, label: ConfigLabel, seed: u64) -> Self {
        TrajectoryRecord {
            schema_version: SCHEMA_VERSION,
            task_id: task.task_id.clone(),
            difficulty: task.difficulty,
            max_turns: task.max_turns,
            config_label: label,
            seed,
            steps: vec![],
            reward: 0,
            checks_passed: 0,
            checks_total: 0,
            termination_cause: TerminationCause::MaxTurns,
            context_overflow: false,
            error: None,
        }
    }

    pub fn succeeded(&self) -> bool {
        self.reward == 1
    }
}

#[derive(Debug, Error)]
pub enum TrajectoryError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: usize, message: String },
    #[error("{path}:{line}: schema version {found}, expected {expected}")]
    SchemaVersion { path: String, line: usize, found: u64, expected: u32 },
    #[error("{0}: no trajectories")]
    Empty(String),
}

pub fn write_jsonl(path: &Path, records: &[TrajectoryRecord]) -> Result<(), TrajectoryError> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in records {
        let line = serde_json::to_string(r).map_err(std::io::Error::other)?;
        writeln!(out, "{line}")?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a trajectory file. Empty files and foreign schema versions are
/// errors.
pub fn read_jsonl(path: &Path) -> Result<Vec<TrajectoryRecord>, TrajectoryError> {
    let file = std::fs::File::open(path)?;
    let name = path.display().to_string();
    let mut out = vec![];
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(&line)
            .map_err(|e| TrajectoryError::Parse { path: name.clone(), line: i + 1, message: e.to_string() })?;
        let found = value.get("schema_version").and_then(serde_json::Value::as_u64).unwrap_or(0);
        if found != u64::from(SCHEMA_VERSION) {
            return Err(TrajectoryError::SchemaVersion { path: name, line: i + 1, found, expected: SCHEMA_VERSION });
        }
        let rec = serde_json::from_value(value)
            .map_err(|e| TrajectoryError::Parse { path: name.clone(), line: i + 1, message: e.to_string() })?;
        out.push(rec);
    }
    if out.is_empty() {
        return Err(TrajectoryError::Empty(name));
    }
    Ok(out)
}
