//! Context compression: the middle of an over-long history is replaced by a
//! model-written summary that must restate every preserved artifact
//! verbatim. One retry, then a mechanical fallback.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{ChatGateway, ChatMessage, ChatRequest, DecodeParams, GatewayError, LlmRole};
use crate::transcript::{
    extract_artifacts, partition, ArtifactPatternSet, Message, PartitionError, PreservedArtifact, Role,
    SummarizationPolicy, TranscriptError, TranscriptHistory,
};

pub const SUMMARIZER_SYSTEM_PROMPT: &str = "You compress the middle section of a tool-using agent's working history \
so the agent can keep going with less context. Write a compact factual summary that covers:
1. Authentication tokens and credentials obtained (exact values).
2. API endpoints used and the response schemas observed.
3. Error patterns seen and how each was resolved.
4. Pagination or iteration progress (which pages or items are done).
5. Task status: what is finished and what remains.
Every value listed under PRESERVE VERBATIM must appear in your summary exactly as written, character for character. \
Do not invent values. Reply with the summary text only.";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SummaryValidation {
    pub ok: bool,
    pub missing: Vec<PreservedArtifact>,
}

/// Which artifacts are absent from `summary_text`.
pub fn validate_summary(summary_text: &str, artifacts: &[PreservedArtifact]) -> SummaryValidation {
    let missing: Vec<PreservedArtifact> =
        artifacts.iter().filter(|a| !summary_text.contains(a.value.as_str())).cloned().collect();
    SummaryValidation { ok: missing.is_empty(), missing }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompressedHistory {
    pub head: Vec<Message>,
    pub summary: Message,
    pub tail: Vec<Message>,
    pub preserved: Vec<PreservedArtifact>,
    /// First and last turn of the summarized middle.
    pub source_span: (u64, u64),
    pub outcome: SummaryOutcome,
}

/// How the summary was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SummaryOutcome {
    Model { attempts: u32 },
    Fallback { attempts: u32 },
}

impl CompressedHistory {
    pub fn messages(&self) -> Vec<Message> {
        self.head.iter().chain(std::iter::once(&self.summary)).chain(&self.tail).cloned().collect()
    }

    pub fn total_chars(&self) -> usize {
        self.head.iter().chain(std::iter::once(&self.summary)).chain(&self.tail).map(Message::char_count).sum()
    }

    /// The compressed history as an ordinary transcript, for further turns.
    pub fn to_history(&self) -> TranscriptHistory {
        TranscriptHistory::from_messages(self.messages()).expect("compression keeps turn order")
    }
}

#[derive(Debug, Error)]
pub enum SummarizeError {
    #[error(transparent)]
    NoMiddle(#[from] PartitionError),
    #[error("summarizer call failed: {0}")]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Transcript(#[from] TranscriptError),
}

#[derive(Debug, Clone)]
pub struct Summarizer {
    pub policy: SummarizationPolicy,
    pub patterns: ArtifactPatternSet,
    pub decode: DecodeParams,
    /// Model attempts after the first before falling back.
    pub retries: u32,
}

impl Default for Summarizer {
    fn default() -> Self {
        Summarizer {
            policy: SummarizationPolicy::default(),
            patterns: ArtifactPatternSet::shared_default().clone(),
            decode: DecodeParams::default(),
            retries: 1,
        }
    }
}

pub fn render_message(m: &Message) -> String {
    let role = match m.role {
        Role::System => "system",
        Role::Agent => "agent",
        Role::Environment => "environment",
        Role::Summary => "summary",
    };
    format!("[turn {} | {role}]\n{}", m.turn_index, m.content)
}

fn artifact_lines(artifacts: &[PreservedArtifact]) -> String {
    if artifacts.is_empty() {
        return "(none)".into();
    }
    artifacts.iter().map(|a| format!("- [{}] {}", a.kind.as_str(), a.value)).collect::<Vec<_>>().join("\n")
}

/// Request asking the model to compress `middle` while restating
/// `artifacts` verbatim.
pub fn build_summarization_request(
    middle: &[Message],
    artifacts: &[PreservedArtifact],
    decode: DecodeParams,
) -> ChatRequest {
    let body = middle.iter().map(render_message).collect::<Vec<_>>().join("\n\n");
    let user = format!("PRESERVE VERBATIM:\n{}\n\nHISTORY TO SUMMARIZE:\n{body}", artifact_lines(artifacts));
    ChatRequest::new(
        LlmRole::Summarizer,
        vec![ChatMessage::system(SUMMARIZER_SYSTEM_PROMPT), ChatMessage::user(user)],
        decode,
    )
}

fn retry_request(first: &ChatRequest, previous: &str, missing: &[PreservedArtifact], too_long: bool) -> ChatRequest {
    let mut req = first.clone();
    req.messages.push(ChatMessage::assistant(previous));
    let mut ask = String::new();
    if !missing.is_empty() {
        ask.push_str(&format!(
            "Your summary is missing these values, which must appear exactly as written:\n{}\n",
            artifact_lines(missing)
        ));
    }
    if too_long {
        ask.push_str("Your summary is longer than the history it replaces. Make it shorter.\n");
    }
    ask.push_str("Rewrite the complete summary.");
    req.messages.push(ChatMessage::user(ask));
    req
}

fn first_line_preview(text: &str, max_chars: usize) -> String {
    let line = text.lines().find(|l| !l.trim().is_empty()).unwrap_or("").trim();
    let mut out: String = line.chars().take(max_chars).collect();
    if line.chars().count() > max_chars {
        out.push_str("...");
    }
    out
}

/// Deterministic summary: the artifact list plus one header line per
/// message, trimmed to stay under `budget` characters where possible.
/// Artifacts are never dropped, even if that exceeds the budget.
pub fn fallback_summary(middle: &[Message], artifacts: &[PreservedArtifact], budget: usize) -> String {
    let (first, last) = span(middle);
    let mut head = format!("Summary of turns {first}-{last} (mechanical).\nPreserved values:\n{}\nSteps:", artifact_lines(artifacts));
    let lines: Vec<String> = middle
        .iter()
        .map(|m| {
            let role = match m.role {
                Role::Agent => "agent",
                Role::Environment => "env",
                Role::System => "system",
                Role::Summary => "summary",
            };
            format!("- turn {} {role}: {}", m.turn_index, first_line_preview(&m.content, 80))
        })
        .collect();
    let len = |s: &str| s.chars().count();
    let mut kept = lines.len();
    loop {
        let mut text = head.clone();
        for l in &lines[..kept] {
            text.push('\n');
            text.push_str(l);
        }
        if kept < lines.len() {
            text.push_str(&format!("\n- ({} more steps omitted)", lines.len() - kept));
        }
        if len(&text) < budget || kept == 0 {
            if len(&text) >= budget && kept == 0 {
                // the artifact block alone is over budget; keep it whole
                head.push_str(&format!("\n- ({} steps omitted)", lines.len()));
                return head;
            }
            return text;
        }
        kept -= 1;
    }
}

fn span(middle: &[Message]) -> (u64, u64) {
    (middle.first().map_or(0, |m| m.turn_index), middle.last().map_or(0, |m| m.turn_index))
}

impl Summarizer {
    pub fn new(policy: SummarizationPolicy) -> Self {
        Summarizer { policy, ..Summarizer::default() }
    }

    /// Artifacts the summary must carry: everything extracted from the head
    /// and the middle, plus values carried by earlier summaries that now sit
    /// inside the middle. Head values are included because the head may be
    /// far from the end of a long context.
    pub fn artifacts_for(
        &self,
        head: &[Message],
        middle: &[Message],
        carried: &[PreservedArtifact],
    ) -> Vec<PreservedArtifact> {
        let scanned: Vec<Message> = head.iter().chain(middle).cloned().collect();
        let mut out = extract_artifacts(&scanned, &self.patterns);
        for a in carried {
            if out.iter().any(|b| b.kind == a.kind && b.value == a.value) {
                continue;
            }
            if let Some(m) = middle.iter().find(|m| m.role == Role::Summary && m.content.contains(&a.value)) {
                out.push(PreservedArtifact { kind: a.kind, value: a.value.clone(), source_turn: m.turn_index });
            }
        }
        out
    }

    /// Compresses `history`. `carried` is the preserved list of the previous
    /// compression in this episode, if any.
    pub fn compress(
        &self,
        history: &TranscriptHistory,
        carried: &[PreservedArtifact],
        gateway: &dyn ChatGateway,
    ) -> Result<CompressedHistory, SummarizeError> {
        let part = partition(history, &self.policy)?;
        let artifacts = self.artifacts_for(&part.head, &part.middle, carried);
        let middle_chars: usize = part.middle.iter().map(Message::char_count).sum();
        let (first, last) = span(&part.middle);

        let first_req = build_summarization_request(&part.middle, &artifacts, self.decode);
        let mut req = first_req.clone();
        let mut attempts = 0;
        let mut accepted = None;
        while attempts <= self.retries {
            attempts += 1;
            let text = gateway.chat(&req)?.content.trim().to_string();
            let check = validate_summary(&text, &artifacts);
            let too_long = text.chars().count() >= middle_chars;
            if check.ok && !too_long && !text.is_empty() {
                accepted = Some(text);
                break;
            }
            req = retry_request(&first_req, &text, &check.missing, too_long);
        }
        let (content, outcome) = match accepted {
            Some(text) => (text, SummaryOutcome::Model { attempts }),
            None => (fallback_summary(&part.middle, &artifacts, middle_chars), SummaryOutcome::Fallback { attempts }),
        };
        debug_assert!(validate_summary(&content, &artifacts).ok);
        Ok(CompressedHistory {
            head: part.head,
            summary: Message::new(Role::Summary, content, last),
            tail: part.tail,
            preserved: artifacts,
            source_span: (first, last),
            outcome,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{Completion, FnGateway};
    use crate::transcript::ArtifactKind;
    use std::sync::atomic::{AtomicU32, Ordering};

    fn history(n: usize, planted: &[(usize, &str)]) -> TranscriptHistory {
        let mut h = TranscriptHistory::new();
        for i in 0..n {
            let role = if i == 0 { Role::System } else if i % 2 == 1 { Role::Environment } else { Role::Agent };
            let mut content = format!("message {i} ").repeat(80);
            if let Some((_, tok)) = planted.iter().find(|(at, _)| *at == i) {
                content.push_str(&format!("{{\"access_token\": \"{tok}\"}}"));
            }
            h.push(Message::new(role, content, i as u64)).unwrap();
        }
        h
    }

    fn gw<F: Fn(&ChatRequest) -> String + Send + Sync>(f: F) -> FnGateway<impl Fn(&ChatRequest) -> Result<Completion, GatewayError> + Send + Sync> {
        FnGateway(move |r: &ChatRequest| Ok(Completion::stop(f(r))))
    }

    #[test]
    fn request_embeds_artifacts() {
        let h = history(40, &[(30, "tkA9"), (31, "tk{\"q\"}")]);
        let part = partition(&h, &SummarizationPolicy::default()).unwrap();
        assert_eq!((part.head.len(), part.middle.len(), part.tail.len()), (26, 8, 6));
        let arts = extract_artifacts(&part.middle, ArtifactPatternSet::shared_default());
        assert_eq!(arts.len(), 2);
        let req = build_summarization_request(&part.middle, &arts, DecodeParams::default());
        let joined = req.joined_content();
        assert!(joined.contains("tkA9"));
        let wire = serde_json::to_string(&req).unwrap();
        let back: ChatRequest = serde_json::from_str(&wire).unwrap();
        assert!(back.joined_content().contains(&arts[1].value));
    }

    #[test]
    fn empty_artifact_section_is_well_formed() {
        let m = [Message::new(Role::Agent, "hello", 3)];
        let req = build_summarization_request(&m, &[], DecodeParams::default());
        req.validate().unwrap();
        assert!(req.messages[1].content.contains("PRESERVE VERBATIM:\n(none)"));
    }

    #[test]
    fn validation_is_substring_based() {
        let a = PreservedArtifact { kind: ArtifactKind::AuthToken, value: "tkA9".into(), source_turn: 3 };
        assert!(validate_summary("use tkA9 later", std::slice::from_ref(&a)).ok);
        let v = validate_summary("the token from step 3", std::slice::from_ref(&a));
        assert_eq!(v.missing, vec![a]);
        assert!(validate_summary("anything", &[]).ok);
    }

    #[test]
    fn model_summary_accepted() {
        let h = history(40, &[(30, "tkA9"), (28, "tkB7")]);
        let s = Summarizer::default();
        let c = s.compress(&h, &[], &gw(|_| "Logged in: tkB7 and tkA9. Nothing else.".into())).unwrap();
        assert_eq!((c.head.len(), c.tail.len()), (26, 6));
        assert_eq!(c.outcome, SummaryOutcome::Model { attempts: 1 });
        assert_eq!(c.head, h.messages()[..26]);
        assert_eq!(c.tail, h.messages()[34..]);
        assert!(c.total_chars() < h.total_chars());
        assert_eq!(c.source_span, (26, 33));
    }

    #[test]
    fn omission_retries_once_then_falls_back() {
        let h = history(40, &[(30, "tkA9")]);
        let calls = AtomicU32::new(0);
        let c = Summarizer::default()
            .compress(
                &h,
                &[],
                &gw(|_| {
                    calls.fetch_add(1, Ordering::SeqCst);
                    "the token from earlier".into()
                }),
            )
            .unwrap();
        assert_eq!(calls.load(Ordering::SeqCst), 2);
        assert_eq!(c.outcome, SummaryOutcome::Fallback { attempts: 2 });
        assert!(c.summary.content.contains("tkA9"));
        assert!(c.total_chars() < h.total_chars());
    }

    #[test]
    fn retry_can_succeed() {
        let h = history(40, &[(30, "tkA9")]);
        let c = Summarizer::default()
            .compress(&h, &[], &gw(|r| if r.messages.len() > 2 { "token tkA9".into() } else { "token".into() }))
            .unwrap();
        assert_eq!(c.outcome, SummaryOutcome::Model { attempts: 2 });
    }

    #[test]
    fn empty_artifacts_accept_any_summary() {
        let h = history(40, &[]);
        let c = Summarizer::default().compress(&h, &[], &gw(|_| "short".into())).unwrap();
        assert_eq!(c.summary.content, "short");
    }

    #[test]
    fn carried_artifacts_survive_resummarization() {
        let h = history(40, &[(30, "tkA9")]);
        let s = Summarizer::default();
        let first = s.compress(&h, &[], &gw(|_| "has tkA9".into())).unwrap();
        let mut view = first.to_history();
        let mut t = view.next_turn();
        while view.len() <= 33 {
            view.push(Message::new(Role::Agent, "x".repeat(100), t)).unwrap();
            t += 1;
        }
        let second = s.compress(&view, &first.preserved, &gw(|_| "nothing".into())).unwrap();
        assert!(second.summary.content.contains("tkA9"));
        for a in &second.preserved {
            assert!(a.is_sound_for(view.messages()));
        }
    }

    #[test]
    fn head_values_are_restated() {
        let h = history(40, &[(5, "tkHEAD")]);
        let c = Summarizer::default().compress(&h, &[], &gw(|_| "nothing".into())).unwrap();
        assert!(c.summary.content.contains("tkHEAD"));
        assert_eq!(c.preserved[0].source_turn, 5);
    }

    #[test]
    fn fallback_keeps_artifacts_even_over_budget() {
        let a = PreservedArtifact { kind: ArtifactKind::AuthToken, value: "x".repeat(300), source_turn: 1 };
        let m = [Message::new(Role::Agent, "short", 1)];
        let text = fallback_summary(&m, std::slice::from_ref(&a), 10);
        assert!(text.contains(&a.value));
    }

    #[test]
    fn gateway_failure_propagates() {
        let h = history(40, &[]);
        let g = FnGateway(|r: &ChatRequest| Err(GatewayError::MissingFixture { role: r.role_target, key: "k".into() }));
        assert!(matches!(Summarizer::default().compress(&h, &[], &g), Err(SummarizeError::Gateway(_))));
    }
}
