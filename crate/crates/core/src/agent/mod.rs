//! The acting agent and the episode driver. Each step runs, in order:
//! summarize (when enabled and triggered), propose, correct (when enabled),
//! execute.

pub mod trajectory;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::code::{fence, fenced_blocks};
use crate::corrector::{build_correction_context, referenced_endpoints, Corrector, FailureEvidence};
use crate::env::{Environment, ErrorKind, ExecutionResult};
use crate::gateway::{ChatGateway, ChatMessage, ChatRequest, DecodeParams, LlmRole};
use crate::summarizer::{SummarizeError, Summarizer};
use crate::transcript::{
    extract_artifacts, should_summarize, CharRatioEstimator, Message, PreservedArtifact, Role, SummarizationPolicy,
    TranscriptHistory,
};

pub use trajectory::{
    read_jsonl, write_jsonl, CorrectionEvent, StepEvent, StepRecord, SummaryEvent, TerminationCause, TrajectoryError,
    TrajectoryRecord, SCHEMA_VERSION,
};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: String,
    pub instruction: String,
    pub difficulty: u8,
    pub max_turns: u32,
}

/// Which scaffold tiers are switched on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConfigLabel {
    Baseline,
    CorrectionOnly,
    FullScaffold,
}

impl ConfigLabel {
    pub const ALL: [ConfigLabel; 3] = [ConfigLabel::Baseline, ConfigLabel::CorrectionOnly, ConfigLabel::FullScaffold];

    pub fn summarizes(self) -> bool {
        self == ConfigLabel::FullScaffold
    }

    pub fn corrects(self) -> bool {
        self != ConfigLabel::Baseline
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ConfigLabel::Baseline => "baseline",
            ConfigLabel::CorrectionOnly => "correction_only",
            ConfigLabel::FullScaffold => "full_scaffold",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            ConfigLabel::Baseline => "Baseline",
            ConfigLabel::CorrectionOnly => "Correction Only",
            ConfigLabel::FullScaffold => "Full Scaffold",
        }
    }
}

impl fmt::Display for ConfigLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ConfigLabel {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ConfigLabel::ALL
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| format!("unknown config label `{s}` (expected baseline, correction_only or full_scaffold)"))
    }
}

pub const AGENT_SYSTEM_PROMPT: &str = "You are an autonomous agent that completes tasks for a user by writing \
Python code against app APIs. Every reply must contain exactly one ```python code block. The block runs in a \
persistent interpreter where `apis.<app>.<endpoint>(...)` calls the apps; variables persist between blocks, and \
printed values and bare expressions are shown back to you.\n\
Work step by step: look up documentation with apis.api_docs.show_api_descriptions(app_name=...) and \
apis.api_docs.show_api_doc(app_name=..., api_name=...) before using an endpoint, log in to an app with the \
password from apis.supervisor.show_account_passwords() to get an access_token, and pass access_token=... to \
every protected endpoint. List endpoints return pages; follow next_page_index until it is None.\n\
When the task is done, call apis.supervisor.complete_task() (with answer=... if the task asks a question).";

/// Agent-side settings for one arm.
#[derive(Debug, Clone)]
pub struct AgentConfig {
    pub label: ConfigLabel,
    pub decode: DecodeParams,
    pub policy: SummarizationPolicy,
    /// Overrides the task's own turn budget when set.
    pub max_turns: Option<u32>,
    /// Gives the corrector the artifacts extracted from the history.
    pub selective_artifact_injection: bool,
    /// Model context budget used to flag overflow, in estimated tokens.
    pub context_limit_tokens: usize,
}

impl AgentConfig {
    pub fn new(label: ConfigLabel) -> Self {
        AgentConfig {
            label,
            decode: DecodeParams::default(),
            policy: SummarizationPolicy::default(),
            max_turns: None,
            selective_artifact_injection: false,
            context_limit_tokens: 12_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProposedAction {
    pub raw_completion: String,
    pub code: String,
    pub turn_index: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum ActionError {
    #[error("NoCode")]
    NoCode,
    #[error("MultipleBlocks")]
    MultipleBlocks,
}

/// The single fenced block of an agent reply.
pub fn extract_action(completion: &str, turn_index: u64) -> Result<ProposedAction, ActionError> {
    let blocks = fenced_blocks(completion);
    match blocks.as_slice() {
        [] => Err(ActionError::NoCode),
        [one] if one.body.trim().is_empty() => Err(ActionError::NoCode),
        [one] => Ok(ProposedAction { raw_completion: completion.to_string(), code: one.body.to_string(), turn_index }),
        _ => Err(ActionError::MultipleBlocks),
    }
}

pub const SUMMARY_PREFIX: &str = "Summary of earlier steps:\n";

/// The agent request: system prompt, task, then the history view with the
/// latest observation last.
pub fn build_agent_context(
    task: &TaskSpec,
    view: &[Message],
    obs: Option<&ExecutionResult>,
    decode: DecodeParams,
) -> ChatRequest {
    let mut messages = vec![ChatMessage::system(AGENT_SYSTEM_PROMPT), ChatMessage::user(format!("Task: {}", task.instruction))];
    for m in view {
        match m.role {
            Role::System => {}
            Role::Agent => messages.push(ChatMessage::assistant(&m.content)),
            Role::Environment => messages.push(ChatMessage::user(&m.content)),
            Role::Summary => messages.push(ChatMessage::user(format!("{SUMMARY_PREFIX}{}", m.content))),
        }
    }
    if let Some(obs) = obs {
        let already_last = view.last().is_some_and(|m| m.role == Role::Environment && m.content == obs.output);
        if !already_last {
            messages.push(ChatMessage::user(&obs.output));
        }
    }
    ChatRequest::new(LlmRole::Agent, messages, decode)
}

/// Mutable state of a running episode.
#[derive(Debug, Clone)]
pub struct EpisodeState {
    /// Everything that happened, never compressed.
    pub history: TranscriptHistory,
    /// What the agent is shown: the history, or its latest compression
    /// plus everything after it.
    pub view: TranscriptHistory,
    pub preserved: Vec<PreservedArtifact>,
    pub last_result: Option<FailureEvidence>,
    pub turn: u32,
    pub terminated: bool,
    pub termination_cause: Option<TerminationCause>,
    pub context_overflow: bool,
}

impl EpisodeState {
    fn new(reset_obs: &ExecutionResult) -> Self {
        let history = TranscriptHistory::from_messages([
            Message::new(Role::System, AGENT_SYSTEM_PROMPT, 0),
            Message::new(Role::Environment, reset_obs.output.clone(), 1),
        ])
        .expect("increasing turns");
        EpisodeState {
            view: history.clone(),
            history,
            preserved: vec![],
            last_result: Some(FailureEvidence { turn_index: 1, result: reset_obs.clone() }),
            turn: 0,
            terminated: false,
            termination_cause: None,
            context_overflow: false,
        }
    }

    fn push(&mut self, msg: Message) {
        self.history.push(msg.clone()).expect("episode turns increase");
        self.view.push(msg).expect("episode turns increase");
    }

    fn terminate(&mut self, cause: TerminationCause) {
        self.terminated = true;
        self.termination_cause = Some(cause);
    }
}

/// Drives episodes for one arm.
pub struct Agent<'a> {
    pub config: AgentConfig,
    pub gateway: &'a dyn ChatGateway,
    pub summarizer: Summarizer,
    pub corrector: Corrector,
}

impl<'a> Agent<'a> {
    pub fn new(config: AgentConfig, gateway: &'a dyn ChatGateway) -> Self {
        let summarizer = Summarizer { policy: config.policy, decode: config.decode, ..Summarizer::default() };
        let corrector = Corrector { decode: config.decode, ..Corrector::default() };
        Agent { config, gateway, summarizer, corrector }
    }

    /// Runs one pass@1 episode. The reward comes from the environment only.
    pub fn run_episode(&self, task: &TaskSpec, env: &mut dyn Environment) -> TrajectoryRecord {
        let mut task = task.clone();
        if let Some(t) = self.config.max_turns {
            task.max_turns = t;
        }
        let mut record = TrajectoryRecord::empty(&task, self.config.label, self.config.decode.seed);
        let reset = match env.reset(&task.task_id) {
            Ok(obs) => obs,
            Err(e) => {
                record.termination_cause = TerminationCause::EnvironmentError;
                record.error = Some(e.to_string());
                return record;
            }
        };
        let mut state = EpisodeState::new(&reset);
        while !state.terminated {
            let step = self.step(&mut state, &task, env, &mut record.error);
            if let Some(step) = step {
                record.steps.push(step);
            }
        }
        record.termination_cause = state.termination_cause.unwrap_or(TerminationCause::MaxTurns);
        record.context_overflow = state.context_overflow;
        if !matches!(record.termination_cause, TerminationCause::EnvironmentError) {
            match env.evaluate() {
                Ok(ev) => {
                    record.reward = ev.reward;
                    record.checks_passed = ev.checks_passed;
                    record.checks_total = ev.checks_total;
                }
                Err(e) => {
                    record.termination_cause = TerminationCause::EnvironmentError;
                    record.error = Some(e.to_string());
                }
            }
        }
        record
    }

    /// One step. Returns `None` if the step was cut short before anything
    /// was executed.
    pub fn step(
        &self,
        state: &mut EpisodeState,
        task: &TaskSpec,
        env: &mut dyn Environment,
        error: &mut Option<String>,
    ) -> Option<StepRecord> {
        assert!(!state.terminated, "step on a terminated episode");
        if state.turn >= task.max_turns {
            state.terminate(TerminationCause::MaxTurns);
            return None;
        }
        state.turn += 1;
        let mut events = vec![];
        let observation = state.view.messages().last().map(|m| m.content.clone()).unwrap_or_default();

        // summarize
        let mut summary = None;
        if self.config.label.summarizes() && should_summarize(&state.view, &self.config.policy) {
            match self.summarizer.compress(&state.view, &state.preserved, self.gateway) {
                Ok(c) => {
                    events.push(StepEvent::Summarize);
                    summary = Some(SummaryEvent {
                        source_span: c.source_span,
                        outcome: c.outcome,
                        chars_before: state.view.total_chars(),
                        chars_after: c.total_chars(),
                        preserved: c.preserved.clone(),
                    });
                    state.preserved = c.preserved.clone();
                    state.view = c.to_history();
                }
                Err(SummarizeError::NoMiddle(_)) => {}
                Err(e) => {
                    *error = Some(e.to_string());
                    state.terminate(TerminationCause::GatewayError);
                    return None;
                }
            }
        }

        // propose
        let agent_turn = state.history.next_turn();
        let req = build_agent_context(task, state.view.messages(), None, self.config.decode);
        let est = CharRatioEstimator::default();
        let req_chars: usize = req.messages.iter().map(|m| m.content.chars().count()).sum();
        if est.tokens_for_chars(req_chars) > self.config.context_limit_tokens {
            state.context_overflow = true;
        }
        let completion = match self.gateway.chat(&req) {
            Ok(c) => c,
            Err(e) => {
                *error = Some(e.to_string());
                state.terminate(TerminationCause::GatewayError);
                return None;
            }
        };
        events.push(StepEvent::Propose);
        if completion.finish_reason == "length" {
            state.context_overflow = true;
        }
        let proposed = extract_action(&completion.content, agent_turn);

        // correct
        let mut correction = None;
        let to_run: Result<String, ActionError> = if self.config.label.corrects() {
            let code = match &proposed {
                Ok(a) => a.code.clone(),
                Err(_) => completion.content.clone(),
            };
            let mut docs = vec![];
            for r in referenced_endpoints(&code) {
                match env.api_doc(&r) {
                    Ok(Some(d)) => docs.push(d),
                    Ok(None) => {}
                    Err(e) => {
                        *error = Some(e.to_string());
                        state.terminate(TerminationCause::EnvironmentError);
                        return None;
                    }
                }
            }
            let ctx = build_correction_context(&code, agent_turn, docs, state.last_result.clone())
                .expect("evidence is always from the previous turn");
            let ctx = if self.config.selective_artifact_injection {
                ctx.with_artifacts(self.injected_artifacts(state))
            } else {
                ctx
            };
            match self.corrector.correct(&ctx, self.gateway) {
                Ok(out) => {
                    events.push(StepEvent::Correct);
                    correction = Some(CorrectionEvent {
                        category: out.category,
                        fallback: out.fallback,
                        attempts: out.attempts,
                        changed: out.code.trim() != code.trim(),
                    });
                    Ok(out.code)
                }
                Err(e) => {
                    *error = Some(e.to_string());
                    state.terminate(TerminationCause::GatewayError);
                    return None;
                }
            }
        } else {
            proposed.clone().map(|a| a.code)
        };

        // execute
        let result = match &to_run {
            Ok(code) => match env.execute(code) {
                Ok(r) => {
                    events.push(StepEvent::Execute);
                    r
                }
                Err(e) => {
                    *error = Some(e.to_string());
                    state.terminate(TerminationCause::EnvironmentError);
                    return None;
                }
            },
            Err(e) => ExecutionResult::failure(
                ErrorKind::Runtime,
                format!("FormatError: {e}. Reply with exactly one ```python code block containing the code to run."),
                vec![],
            ),
        };

        let proposed_code = proposed.as_ref().ok().map(|a| a.code.clone());
        let agent_msg = match (&proposed_code, &to_run) {
            (Some(p), Ok(run)) if p.trim() != run.trim() => fence(run),
            _ => completion.content.clone(),
        };
        state.push(Message::new(Role::Agent, agent_msg, agent_turn));
        state.push(Message::new(Role::Environment, result.output.clone(), agent_turn + 1));
        state.last_result = Some(FailureEvidence { turn_index: agent_turn + 1, result: result.clone() });

        if result.signals_completion() {
            state.terminate(TerminationCause::Completed);
        } else if state.turn >= task.max_turns {
            state.terminate(TerminationCause::MaxTurns);
        }

        Some(StepRecord {
            turn: state.turn,
            observation,
            proposal_error: proposed.as_ref().err().map(|e| e.to_string()),
            corrected_code: to_run.ok(),
            proposed_code,
            exec_output: result.output.clone(),
            exec_ok: result.ok,
            error_kind: result.error_kind,
            summarized: summary.is_some(),
            summary,
            correction,
            events,
            api_calls: result.api_trace.iter().map(|t| format!("{}.{}:{}", t.app, t.endpoint, t.status)).collect(),
            finish_reason: completion.finish_reason,
        })
    }

    fn injected_artifacts(&self, state: &EpisodeState) -> Vec<PreservedArtifact> {
        let mut out = extract_artifacts(state.history.messages(), &self.summarizer.patterns);
        for a in &state.preserved {
            if !out.iter().any(|b| b.kind == a.kind && b.value == a.value) {
                out.push(a.clone());
            }
        }
        out
    }
}

/// Convenience wrapper: one episode with a fresh agent.
pub fn run_episode(
    task: &TaskSpec,
    config: &AgentConfig,
    gateway: &dyn ChatGateway,
    env: &mut dyn Environment,
) -> TrajectoryRecord {
    Agent::new(config.clone(), gateway).run_episode(task, env)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn task() -> TaskSpec {
        TaskSpec { task_id: "t".into(), instruction: "Send the report.".into(), difficulty: 1, max_turns: 3 }
    }

    #[test]
    fn extract_action_cases() {
        assert_eq!(extract_action("ok\n```python\nx = 1\n```", 2).unwrap().code, "x = 1");
        assert_eq!(extract_action("```\na\n```\n```\nb\n```", 2), Err(ActionError::MultipleBlocks));
        assert_eq!(extract_action("just prose", 2), Err(ActionError::NoCode));
    }

    #[test]
    fn fresh_context_is_system_and_task() {
        let req = build_agent_context(&task(), &[], None, DecodeParams::default());
        assert_eq!(req.messages.len(), 2);
        assert_eq!(req.messages[1].content, "Task: Send the report.");
        let d = req.decode;
        assert_eq!((d.temperature, d.seed, d.max_completion_tokens), (0.0, 100, 3000));
    }

    #[test]
    fn summary_rendered_between_head_and_tail() {
        let view = [
            Message::new(Role::System, "sys", 0),
            Message::new(Role::Environment, "obs", 1),
            Message::new(Role::Summary, "compressed", 5),
            Message::new(Role::Agent, "act", 6),
            Message::new(Role::Environment, "latest", 7),
        ];
        let obs = ExecutionResult::success("latest", vec![]);
        let req = build_agent_context(&task(), &view, Some(&obs), DecodeParams::default());
        let contents: Vec<_> = req.messages.iter().map(|m| m.content.as_str()).collect();
        assert_eq!(contents[3], "Summary of earlier steps:\ncompressed");
        assert_eq!(*contents.last().unwrap(), "latest");
        assert_eq!(contents.len(), 6);
    }

    #[test]
    fn labels() {
        assert!(!ConfigLabel::CorrectionOnly.summarizes() && ConfigLabel::CorrectionOnly.corrects());
        assert!(ConfigLabel::FullScaffold.summarizes() && ConfigLabel::FullScaffold.corrects());
        assert_eq!("full_scaffold".parse::<ConfigLabel>(), Ok(ConfigLabel::FullScaffold));
    }
}
