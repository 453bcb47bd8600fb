//! Episode history: the ordered message log, its size accounting, the
//! head / middle / tail partition used by the summarizer, and extraction of
//! state values that must survive compression verbatim.

use std::collections::HashSet;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    System,
    Agent,
    Environment,
    Summary,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
    pub turn_index: u64,
}

impl Message {
    pub fn new(role: Role, content: impl Into<String>, turn_index: u64) -> Self {
        Message { role, content: content.into(), turn_index }
    }

    /// Length of the content in Unicode scalar values.
    pub fn char_count(&self) -> usize {
        self.content.chars().count()
    }
}

/// Maps text size to a token estimate. Exact tokenizers can implement this.
pub trait TokenEstimator: Send + Sync {
    fn estimate(&self, text: &str) -> usize;
}

/// `ceil(chars / chars_per_token)`. The default ratio is 4.
#[derive(Debug, Clone, Copy)]
pub struct CharRatioEstimator {
    pub chars_per_token: usize,
}

impl Default for CharRatioEstimator {
    fn default() -> Self {
        CharRatioEstimator { chars_per_token: 4 }
    }
}

impl CharRatioEstimator {
    pub fn tokens_for_chars(&self, chars: usize) -> usize {
        chars.div_ceil(self.chars_per_token.max(1))
    }
}

impl TokenEstimator for CharRatioEstimator {
    fn estimate(&self, text: &str) -> usize {
        self.tokens_for_chars(text.chars().count())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TranscriptError {
    #[error("turn index {got} does not follow last turn index {last}")]
    NonMonotonicTurn { last: u64, got: u64 },
}

/// Append-only message log. `append` returns a new value and leaves the
/// original untouched, so a snapshot can be summarized while the episode
/// keeps going.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptHistory {
    messages: Vec<Message>,
    total_chars: usize,
}

impl TranscriptHistory {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a history from messages, checking turn ordering.
    pub fn from_messages(messages: impl IntoIterator<Item = Message>) -> Result<Self, TranscriptError> {
        let mut history = Self::new();
        for m in messages {
            history.push(m)?;
        }
        Ok(history)
    }

    pub fn messages(&self) -> &[Message] {
        &self.messages
    }

    pub fn len(&self) -> usize {
        self.messages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.messages.is_empty()
    }

    pub fn total_chars(&self) -> usize {
        self.total_chars
    }

    /// Token estimate under the default 4-chars-per-token estimator.
    pub fn estimated_tokens(&self) -> usize {
        CharRatioEstimator::default().tokens_for_chars(self.total_chars)
    }

    pub fn estimated_tokens_with(&self, estimator: &dyn TokenEstimator) -> usize {
        self.messages.iter().map(|m| estimator.estimate(&m.content)).sum()
    }

    pub fn last_turn(&self) -> Option<u64> {
        self.messages.last().map(|m| m.turn_index)
    }

    /// Next free turn index.
    pub fn next_turn(&self) -> u64 {
        self.last_turn().map_or(0, |t| t + 1)
    }

    pub fn append(&self, msg: Message) -> Result<TranscriptHistory, TranscriptError> {
        let mut next = self.clone();
        next.push(msg)?;
        Ok(next)
    }

    /// In-place append. Past messages are never touched.
    pub fn push(&mut self, msg: Message) -> Result<(), TranscriptError> {
        if let Some(last) = self.last_turn() {
            if msg.turn_index <= last {
                return Err(TranscriptError::NonMonotonicTurn { last, got: msg.turn_index });
            }
        }
        self.total_chars += msg.char_count();
        self.messages.push(msg);
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SummarizationPolicy {
    pub char_threshold: usize,
    pub token_threshold: usize,
    pub head_n: usize,
    pub tail_k: usize,
}

impl Default for SummarizationPolicy {
    fn default() -> Self {
        SummarizationPolicy { char_threshold: 24_000, token_threshold: 6_000, head_n: 26, tail_k: 6 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PolicyError {
    #[error("summarization policy field `{0}` must be positive")]
    NonPositive(&'static str),
    #[error("head_n + tail_k must be at least 2")]
    TooSmallWindow,
}

impl SummarizationPolicy {
    pub fn validate(&self) -> Result<(), PolicyError> {
        for (name, v) in [
            ("char_threshold", self.char_threshold),
            ("token_threshold", self.token_threshold),
            ("head_n", self.head_n),
            ("tail_k", self.tail_k),
        ] {
            if v == 0 {
                return Err(PolicyError::NonPositive(name));
            }
        }
        if self.head_n + self.tail_k < 2 {
            return Err(PolicyError::TooSmallWindow);
        }
        Ok(())
    }
}

/// True iff the history is strictly over either threshold.
pub fn should_summarize(history: &TranscriptHistory, policy: &SummarizationPolicy) -> bool {
    history.total_chars() > policy.char_threshold || history.estimated_tokens() > policy.token_threshold
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HistoryPartition {
    pub head: Vec<Message>,
    pub middle: Vec<Message>,
    pub tail: Vec<Message>,
}

impl HistoryPartition {
    pub fn concat(&self) -> Vec<Message> {
        self.head.iter().chain(&self.middle).chain(&self.tail).cloned().collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PartitionError {
    #[error("history of {len} messages has no middle to summarize (head {head_n} + tail {tail_k})")]
    NoMiddle { len: usize, head_n: usize, tail_k: usize },
}

/// Splits the history into a verbatim head, a middle to compress and a
/// verbatim tail. The caller is expected to have checked `should_summarize`.
pub fn partition(history: &TranscriptHistory, policy: &SummarizationPolicy) -> Result<HistoryPartition, PartitionError> {
    let msgs = history.messages();
    if msgs.len() <= policy.head_n + policy.tail_k {
        return Err(PartitionError::NoMiddle { len: msgs.len(), head_n: policy.head_n, tail_k: policy.tail_k });
    }
    let head_end = policy.head_n;
    let tail_start = msgs.len() - policy.tail_k;
    Ok(HistoryPartition {
        head: msgs[..head_end].to_vec(),
        middle: msgs[head_end..tail_start].to_vec(),
        tail: msgs[tail_start..].to_vec(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArtifactKind {
    AuthToken,
    Credential,
    ApiSchemaObservation,
    ErrorResolution,
    PaginationState,
    TaskStatus,
}

impl ArtifactKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ArtifactKind::AuthToken => "auth_token",
            ArtifactKind::Credential => "credential",
            ArtifactKind::ApiSchemaObservation => "api_schema_observation",
            ArtifactKind::ErrorResolution => "error_resolution",
            ArtifactKind::PaginationState => "pagination_state",
            ArtifactKind::TaskStatus => "task_status",
        }
    }
}

/// A state value that a summary has to restate verbatim.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PreservedArtifact {
    pub kind: ArtifactKind,
    pub value: String,
    pub source_turn: u64,
}

impl PreservedArtifact {
    /// Checks the value against the message it claims to come from.
    pub fn is_sound_for(&self, messages: &[Message]) -> bool {
        messages
            .iter()
            .find(|m| m.turn_index == self.source_turn)
            .is_some_and(|m| m.content.contains(&self.value))
    }
}

#[derive(Debug, Clone)]
pub struct ArtifactPattern {
    pub kind: ArtifactKind,
    /// Regex whose end is the position right before the value.
    pub key: Regex,
}

/// Key patterns used to pull artifacts out of messages.
#[derive(Debug, Clone)]
pub struct ArtifactPatternSet {
    pub patterns: Vec<ArtifactPattern>,
    pub max_value_chars: usize,
}

const MAX_ARTIFACT_CHARS: usize = 512;

impl Default for ArtifactPatternSet {
    fn default() -> Self {
        let key = |names: &str| {
            Regex::new(&format!(r#"(?i)["']?\b(?:{names})\b["']?\s*[:=]\s*"#)).expect("static artifact regex")
        };
        ArtifactPatternSet {
            patterns: vec![
                ArtifactPattern { kind: ArtifactKind::AuthToken, key: key("access_token|token|session_id") },
                ArtifactPattern { kind: ArtifactKind::Credential, key: key("api_key|password") },
                ArtifactPattern { kind: ArtifactKind::PaginationState, key: key("page_index|next_page") },
            ],
            max_value_chars: MAX_ARTIFACT_CHARS,
        }
    }
}

impl ArtifactPatternSet {
    pub fn shared_default() -> &'static ArtifactPatternSet {
        static DEFAULT: OnceLock<ArtifactPatternSet> = OnceLock::new();
        DEFAULT.get_or_init(ArtifactPatternSet::default)
    }
}

/// Extracts artifacts from `messages`. Results are deduplicated on
/// `(kind, value)`, keeping the first occurrence, and ordered by position.
pub fn extract_artifacts(messages: &[Message], patterns: &ArtifactPatternSet) -> Vec<PreservedArtifact> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for msg in messages {
        let mut found: Vec<(usize, ArtifactKind, &str)> = Vec::new();
        for pattern in &patterns.patterns {
            for m in pattern.key.find_iter(&msg.content) {
                if let Some(value) = json_value_at(&msg.content[m.end()..], patterns.max_value_chars) {
                    if !value.is_empty() {
                        found.push((m.end(), pattern.kind, value));
                    }
                }
            }
        }
        found.sort_by_key(|(pos, kind, _)| (*pos, *kind));
        for (_, kind, value) in found {
            if seen.insert((kind, value.to_string())) {
                out.push(PreservedArtifact { kind, value: value.to_string(), source_turn: msg.turn_index });
            }
        }
    }
    out
}

/// Reads the JSON (or Python) literal at the start of `s`. Strings yield the
/// raw text between the quotes, so the result is always a substring of `s`.
/// Identifiers and other expressions yield `None`.
fn json_value_at(s: &str, cap: usize) -> Option<&str> {
    let first = s.chars().next()?;
    let value = match first {
        '"' | '\'' => {
            let mut escaped = false;
            let mut end = None;
            for (i, c) in s.char_indices().skip(1) {
                if escaped {
                    escaped = false;
                } else if c == '\\' {
                    escaped = true;
                } else if c == first {
                    end = Some(i);
                    break;
                } else if c == '\n' {
                    break;
                }
            }
            &s[1..end?]
        }
        '{' | '[' => {
            let mut depth = 0i32;
            let mut in_str: Option<char> = None;
            let mut escaped = false;
            let mut end = None;
            for (i, c) in s.char_indices() {
                if let Some(q) = in_str {
                    if escaped {
                        escaped = false;
                    } else if c == '\\' {
                        escaped = true;
                    } else if c == q {
                        in_str = None;
                    }
                    continue;
                }
                match c {
                    '"' | '\'' => in_str = Some(c),
                    '{' | '[' => depth += 1,
                    '}' | ']' => {
                        depth -= 1;
                        if depth == 0 {
                            end = Some(i + 1);
                            break;
                        }
                    }
                    _ => {}
                }
            }
            &s[..end?]
        }
        c if c == '-' || c.is_ascii_digit() => {
            let end = s
                .char_indices()
                .find(|(i, c)| !(c.is_ascii_digit() || *c == '.' || (*i == 0 && *c == '-') || *c == 'e' || *c == 'E'))
                .map_or(s.len(), |(i, _)| i);
            let lit = &s[..end];
            lit.parse::<f64>().ok()?;
            lit
        }
        _ => {
            let end = s.find(|c: char| !c.is_ascii_alphabetic()).unwrap_or(s.len());
            match &s[..end] {
                lit @ ("true" | "false" | "True" | "False") => lit,
                _ => return None,
            }
        }
    };
    Some(truncate_chars(value, cap))
}

fn truncate_chars(s: &str, max_chars: usize) -> &str {
    match s.char_indices().nth(max_chars) {
        Some((idx, _)) => &s[..idx],
        None => s,
    }
}
