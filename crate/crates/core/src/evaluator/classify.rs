//! Failure classification of unsuccessful episodes, either by fixed rules
//! over the trajectory or by a judge model.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{StepRecord, TerminationCause, TrajectoryRecord};
use crate::env::ErrorKind;
use crate::gateway::{ChatGateway, ChatMessage, ChatRequest, DecodeParams, GatewayError, LlmRole};

use super::FailureCategory;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureClassification {
    pub task_id: String,
    pub primary: FailureCategory,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub secondary: Option<FailureCategory>,
    pub confidence: f64,
    pub evidence: String,
}

#[derive(Clone, Copy)]
pub enum ClassifyMode<'a> {
    RuleBased,
    Judge(&'a dyn ChatGateway),
}

#[derive(Debug, Error)]
pub enum ClassifyError {
    #[error("task `{0}` succeeded; only failed episodes are classified")]
    NotAFailure(String),
    #[error("judge output could not be parsed ({message}); raw output: {raw}")]
    JudgeUnparsable { raw: String, message: String },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

pub fn classify_failure(record: &TrajectoryRecord, mode: ClassifyMode<'_>) -> Result<FailureClassification, ClassifyError> {
    if record.succeeded() {
        return Err(ClassifyError::NotAFailure(record.task_id.clone()));
    }
    match mode {
        ClassifyMode::RuleBased => Ok(classify_rule_based(record)),
        ClassifyMode::Judge(gw) => {
            let out = gw.chat(&build_judge_request(record))?;
            parse_judge_output(&record.task_id, &out.content)
        }
    }
}

fn error_category(kind: ErrorKind) -> FailureCategory {
    match kind {
        ErrorKind::AuthRequired | ErrorKind::InvalidCredentials => FailureCategory::AuthCredentials,
        ErrorKind::SchemaMismatch => FailureCategory::ApiParamsSchema,
        ErrorKind::UnknownEndpoint => FailureCategory::MissingApiWrongName,
        ErrorKind::PaginationBound => FailureCategory::PaginationIncomplete,
        ErrorKind::Runtime => FailureCategory::Other,
    }
}

/// Tie-break order when two error categories are equally frequent.
const ERROR_PRIORITY: [FailureCategory; 5] = [
    FailureCategory::AuthCredentials,
    FailureCategory::ApiParamsSchema,
    FailureCategory::MissingApiWrongName,
    FailureCategory::PaginationIncomplete,
    FailureCategory::Other,
];

type Finding = (FailureCategory, f64, String);

fn last_line(s: &str) -> &str {
    s.lines().rev().find(|l| !l.trim().is_empty()).unwrap_or("").trim()
}

fn executed_code(s: &StepRecord) -> Option<&str> {
    if s.proposal_error.is_some() && s.corrected_code.is_none() {
        return None;
    }
    s.corrected_code.as_deref()
}

/// Every rule that fires, in priority order.
fn findings(r: &TrajectoryRecord) -> Vec<Finding> {
    let mut out: Vec<Finding> = vec![];
    let steps = &r.steps;

    if matches!(r.termination_cause, TerminationCause::EnvironmentError | TerminationCause::GatewayError) {
        out.push((
            FailureCategory::ToolingRuntime,
            0.9,
            format!("episode ended with {:?}: {}", r.termination_cause, r.error.as_deref().unwrap_or("no message")),
        ));
    }

    let errored: Vec<&StepRecord> =
        steps.iter().filter(|s| s.proposal_error.is_none() && s.error_kind.is_some()).collect();
    let mut counts: BTreeMap<FailureCategory, Vec<&StepRecord>> = BTreeMap::new();
    for s in &errored {
        counts.entry(error_category(s.error_kind.expect("filtered"))).or_default().push(s);
    }
    let dominant = ERROR_PRIORITY
        .iter()
        .filter_map(|c| counts.get(c).map(|v| (*c, v)))
        .max_by(|a, b| a.1.len().cmp(&b.1.len()).then_with(|| rank(b.0).cmp(&rank(a.0))));
    if let Some((cat, hits)) = dominant {
        if hits.len() >= 2 {
            out.push((
                cat,
                0.85,
                format!(
                    "{} of {} steps failed this way; last at turn {}: {}",
                    hits.len(),
                    steps.len(),
                    hits[hits.len() - 1].turn,
                    last_line(&hits[hits.len() - 1].exec_output)
                ),
            ));
        }
    }

    let mut logins: BTreeMap<&str, usize> = BTreeMap::new();
    for s in steps {
        for call in &s.api_calls {
            if let Some(app) = call.strip_suffix(".login:ok") {
                *logins.entry(app).or_default() += 1;
            }
        }
    }
    if let Some((app, n)) = logins.iter().filter(|(_, n)| **n >= 2).max_by_key(|(_, n)| **n) {
        out.push((
            FailureCategory::AuthCredentials,
            0.8,
            format!("logged in to {app} {n} times; the earlier credentials were lost and extracted again"),
        ));
    }

    let mut run = 1;
    for w in steps.windows(2) {
        match (executed_code(&w[0]), executed_code(&w[1])) {
            (Some(a), Some(b)) if a.trim() == b.trim() => {
                run += 1;
                if run == 3 {
                    out.push((
                        FailureCategory::RepetitionLoop,
                        0.8,
                        format!("identical code executed at turns {}-{}: {}", w[1].turn - 2, w[1].turn, last_line(b)),
                    ));
                    break;
                }
            }
            _ => run = 1,
        }
    }

    if let Some(s) = steps.iter().find(|s| s.proposal_error.is_some()) {
        out.push((
            FailureCategory::FormattingCodeBlock,
            0.8,
            format!("turn {}: reply had no usable code block ({})", s.turn, s.proposal_error.as_deref().unwrap_or("")),
        ));
    }

    if r.context_overflow {
        out.push((FailureCategory::ContextLength, 0.75, "the context exceeded the model budget before the episode ended".into()));
    }

    if let [only] = errored.as_slice() {
        let kind = only.error_kind.expect("filtered");
        out.push((
            error_category(kind),
            0.6,
            format!("turn {} failed with {}: {}", only.turn, kind.as_str(), last_line(&only.exec_output)),
        ));
    }

    static NEXT: OnceLock<Regex> = OnceLock::new();
    let next = NEXT.get_or_init(|| Regex::new(r#""next_page_index":\s*(\d+)"#).expect("static regex"));
    for (i, s) in steps.iter().enumerate() {
        if !s.exec_ok {
            continue;
        }
        if let Some(c) = next.captures(&s.exec_output) {
            let followed = steps[i + 1..].iter().filter_map(executed_code).any(|code| code.contains("page_index"));
            if !followed {
                out.push((
                    FailureCategory::PaginationIncomplete,
                    0.7,
                    format!("turn {} returned next_page_index {} but later pages were never requested", s.turn, &c[1]),
                ));
                break;
            }
        }
    }

    if r.termination_cause == TerminationCause::Completed {
        out.push((
            FailureCategory::ReasoningPlanning,
            0.7,
            format!("agent declared completion but {} of {} checks passed", r.checks_passed, r.checks_total),
        ));
    }

    out.push((
        FailureCategory::Other,
        0.5,
        format!("no specific pattern; episode ended by {:?} after {} steps", r.termination_cause, steps.len()),
    ));
    out
}

fn rank(c: FailureCategory) -> usize {
    ERROR_PRIORITY.iter().position(|p| *p == c).unwrap_or(usize::MAX)
}

/// Deterministic classification. The first matching rule gives the primary
/// category; the next rule with a different category gives the secondary.
pub fn classify_rule_based(record: &TrajectoryRecord) -> FailureClassification {
    let f = findings(record);
    let (primary, confidence, evidence) = f[0].clone();
    // the last finding is the catch-all and never a secondary
    let secondary = f[1..f.len().max(2) - 1].iter().map(|x| x.0).find(|c| *c != primary);
    FailureClassification { task_id: record.task_id.clone(), primary, secondary, confidence, evidence }
}

pub fn judge_system_prompt() -> String {
    let mut s = String::from(
        "You analyse a failed episode of a tool-using agent and classify why it failed. Categories:\n",
    );
    for c in FailureCategory::ALL {
        s.push_str(&format!("- {}\n", c.label()));
    }
    s.push_str(
        "\nReply with one JSON object: {\"primary\": <category>, \"secondary\": <category or null>, \
\"confidence\": <number between 0 and 1>, \"evidence\": <short quote from the trajectory>}.",
    );
    s
}

pub fn build_judge_request(record: &TrajectoryRecord) -> ChatRequest {
    let mut user = format!(
        "TASK: {}\nTERMINATION: {:?}\nCHECKS PASSED: {}/{}\n\nSTEPS:\n",
        record.task_id, record.termination_cause, record.checks_passed, record.checks_total
    );
    for s in &record.steps {
        let code = s.corrected_code.as_deref().or(s.proposed_code.as_deref()).unwrap_or("(no code)");
        let out: String = s.exec_output.chars().take(400).collect();
        user.push_str(&format!("[turn {}]\n{}\n-> {}\n\n", s.turn, code, out));
    }
    ChatRequest::new(
        LlmRole::Judge,
        vec![ChatMessage::system(judge_system_prompt()), ChatMessage::user(user)],
        DecodeParams::default(),
    )
}

#[derive(Deserialize)]
struct JudgeReply {
    primary: String,
    #[serde(default)]
    secondary: Option<String>,
    confidence: f64,
    #[serde(default)]
    evidence: String,
}

fn category(raw: &str) -> Option<FailureCategory> {
    raw.parse::<FailureCategory>().ok().or_else(|| FailureCategory::parse_label(raw).ok())
}

/// Parses the first JSON object in a judge reply.
pub fn parse_judge_output(task_id: &str, raw: &str) -> Result<FailureClassification, ClassifyError> {
    let bad = |message: String| ClassifyError::JudgeUnparsable { raw: raw.to_string(), message };
    let (Some(start), Some(end)) = (raw.find('{'), raw.rfind('}')) else {
        return Err(bad("no JSON object".into()));
    };
    if end < start {
        return Err(bad("no JSON object".into()));
    }
    let reply: JudgeReply = serde_json::from_str(&raw[start..=end]).map_err(|e| bad(e.to_string()))?;
    let primary = category(&reply.primary).ok_or_else(|| bad(format!("unknown category `{}`", reply.primary)))?;
    let secondary = match reply.secondary.as_deref().map(str::trim) {
        None | Some("") | Some("null") | Some("none") => None,
        Some(s) => Some(category(s).ok_or_else(|| bad(format!("unknown category `{s}`")))?),
    };
    if !(0.0..=1.0).contains(&reply.confidence) {
        return Err(bad(format!("confidence {} outside [0, 1]", reply.confidence)));
    }
    let evidence = if reply.evidence.trim().is_empty() { "(judge gave no evidence)".to_string() } else { reply.evidence };
    Ok(FailureClassification { task_id: task_id.to_string(), primary, secondary, confidence: reply.confidence, evidence })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::{ConfigLabel, TaskSpec};
    use crate::gateway::{Completion, FnGateway};

    fn step(turn: u32, code: &str, kind: Option<ErrorKind>, output: &str) -> StepRecord {
        StepRecord {
            turn,
            observation: String::new(),
            proposed_code: Some(code.into()),
            proposal_error: None,
            corrected_code: Some(code.into()),
            exec_output: output.into(),
            exec_ok: kind.is_none(),
            error_kind: kind,
            summarized: false,
            summary: None,
            correction: None,
            events: vec![],
            api_calls: vec![],
            finish_reason: "stop".into(),
        }
    }

    fn record(steps: Vec<StepRecord>, cause: TerminationCause) -> TrajectoryRecord {
        let task = TaskSpec { task_id: "t".into(), instruction: String::new(), difficulty: 1, max_turns: 30 };
        let mut r = TrajectoryRecord::empty(&task, ConfigLabel::Baseline, 100);
        r.steps = steps;
        r.termination_cause = cause;
        r
    }

    #[test]
    fn auth_dominant() {
        let steps = (1..=4)
            .map(|t| step(t, &format!("apis.mail.list_inbox(access_token=\"x{t}\")"), Some(ErrorKind::AuthRequired), "AuthRequired: no"))
            .collect();
        let c = classify_rule_based(&record(steps, TerminationCause::MaxTurns));
        assert_eq!(c.primary, FailureCategory::AuthCredentials);
        assert!(!c.evidence.is_empty());
    }

    #[test]
    fn identical_code_is_a_loop() {
        let mut steps: Vec<_> = (1..=4).map(|t| step(t, &format!("a{t}"), None, "ok")).collect();
        steps.extend((5..=7).map(|t| step(t, "apis.music.search_songs()", None, "ok")));
        let c = classify_rule_based(&record(steps, TerminationCause::MaxTurns));
        assert_eq!(c.primary, FailureCategory::RepetitionLoop);
        assert!(c.evidence.contains("5-7"));
    }

    #[test]
    fn success_is_rejected() {
        let mut r = record(vec![], TerminationCause::Completed);
        r.reward = 1;
        assert!(matches!(classify_failure(&r, ClassifyMode::RuleBased), Err(ClassifyError::NotAFailure(_))));
    }

    #[test]
    fn pure_function() {
        let r = record(vec![step(1, "x", Some(ErrorKind::Runtime), "RuntimeError: x")], TerminationCause::MaxTurns);
        assert_eq!(classify_rule_based(&r), classify_rule_based(&r));
    }

    #[test]
    fn judge_parse() {
        let r = record(vec![], TerminationCause::MaxTurns);
        let gw = FnGateway(|_: &ChatRequest| {
            Ok(Completion::stop(
                "Here: {\"primary\": \"Wrong API params / schema mismatch\", \"secondary\": null, \"confidence\": 0.9, \"evidence\": \"SchemaMismatch\"}",
            ))
        });
        let c = classify_failure(&r, ClassifyMode::Judge(&gw)).unwrap();
        assert_eq!((c.primary, c.secondary, c.confidence), (FailureCategory::ApiParamsSchema, None, 0.9));
        let err = parse_judge_output("t", "I think it is auth").unwrap_err();
        assert!(matches!(err, ClassifyError::JudgeUnparsable { ref raw, .. } if raw == "I think it is auth"));
        assert!(parse_judge_output("t", r#"{"primary":"auth_credentials","confidence":1.5}"#).is_err());
    }
}
