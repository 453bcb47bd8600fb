//! The history-isolated corrector. It reviews one proposed action using
//! only that action, the documentation of the endpoints it references, and
//! the immediately preceding failure, then returns a validated patch.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::code::{call_sites, fence, fenced_blocks};
use crate::env::{ApiDoc, EndpointRef, ExecutionResult};
use crate::evaluator::FailureCategory;
use crate::gateway::{ChatGateway, ChatMessage, ChatRequest, DecodeParams, GatewayError, LlmRole};
use crate::transcript::PreservedArtifact;

/// Every `apis.<app>.<endpoint>(` in `code`, deduplicated, in source order.
pub fn referenced_endpoints(code: &str) -> Vec<EndpointRef> {
    let mut seen = BTreeSet::new();
    call_sites(code)
        .into_iter()
        .map(|c| EndpointRef::new(c.app, c.endpoint))
        .filter(|r| seen.insert(r.clone()))
        .collect()
}

/// The execution result of the step right before the one being corrected.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FailureEvidence {
    pub turn_index: u64,
    pub result: ExecutionResult,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IsolationError {
    #[error("failure evidence from turn {evidence_turn} is not from the step before turn {action_turn}")]
    StaleEvidence { evidence_turn: u64, action_turn: u64 },
    #[error("documentation for {0} was supplied but the code does not reference it")]
    UnreferencedDoc(EndpointRef),
}

/// Everything the corrector may see. Only [`build_correction_context`]
/// constructs one, so the isolation rules hold for every instance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorrectionContext {
    proposed_code: String,
    docs: Vec<ApiDoc>,
    last_failure: Option<ExecutionResult>,
    artifacts: Vec<PreservedArtifact>,
}

/// Builds the corrector's input for the action proposed at `action_turn`.
///
/// Evidence must come from the immediately preceding step; a successful
/// result is dropped since only failures are shown. Docs must be for
/// endpoints the code references.
pub fn build_correction_context(
    proposed_code: &str,
    action_turn: u64,
    docs: Vec<ApiDoc>,
    last_failure: Option<FailureEvidence>,
) -> Result<CorrectionContext, IsolationError> {
    let refs = referenced_endpoints(proposed_code);
    if let Some(doc) = docs.iter().find(|d| !refs.contains(&d.endpoint_ref())) {
        return Err(IsolationError::UnreferencedDoc(doc.endpoint_ref()));
    }
    let last_failure = match last_failure {
        Some(ev) if ev.turn_index + 1 != action_turn => {
            return Err(IsolationError::StaleEvidence { evidence_turn: ev.turn_index, action_turn })
        }
        Some(ev) if !ev.result.ok => Some(ev.result),
        _ => None,
    };
    Ok(CorrectionContext { proposed_code: proposed_code.to_string(), docs, last_failure, artifacts: vec![] })
}

impl CorrectionContext {
    /// Adds validated artifacts to the corrector's view. Off by default.
    pub fn with_artifacts(mut self, artifacts: Vec<PreservedArtifact>) -> Self {
        self.artifacts = artifacts;
        self
    }

    pub fn proposed_code(&self) -> &str {
        &self.proposed_code
    }

    pub fn docs(&self) -> &[ApiDoc] {
        &self.docs
    }

    pub fn last_failure(&self) -> Option<&ExecutionResult> {
        self.last_failure.as_ref()
    }

    pub fn artifacts(&self) -> &[PreservedArtifact] {
        &self.artifacts
    }
}

pub fn corrector_system_prompt() -> String {
    let mut s = String::from(
        "You review one proposed code action of a tool-using agent before it runs. You see only the proposed code, \
the documentation of the endpoints it calls, and the last execution result if it failed.\n\
Classify the problem into one of these categories, or `none` if the code is fine:\n",
    );
    for c in FailureCategory::ALL {
        s.push_str(&format!("- {}\n", c.label()));
    }
    s.push_str(
        "\nReply in exactly this format:\n\
CATEGORY: <category or none>\n\
EVIDENCE: <quote from the error output or documentation>\n\
DIAGNOSIS: <one or two sentences>\n\
PATCH:\n```python\n<corrected code>\n```\n\n\
The patch must contain exactly one code block, include at least one apis.* call, and use keyword argument \
names exactly as documented. If the code is already correct, return it unchanged. If you are unsure how to \
fix it, query the documentation with apis.api_docs.show_api_doc(...).",
    );
    s
}

/// The corrector request: system instructions plus one user message built
/// from the context alone.
pub fn build_correction_request(ctx: &CorrectionContext, decode: DecodeParams) -> ChatRequest {
    let mut user = format!("PROPOSED CODE:\n{}\n\nAPI DOCUMENTATION:\n", fence(&ctx.proposed_code));
    if ctx.docs.is_empty() {
        user.push_str("(no documentation available)\n");
    }
    for d in &ctx.docs {
        user.push_str(&serde_json::to_string(d).expect("docs serialize"));
        user.push('\n');
    }
    match &ctx.last_failure {
        Some(r) => user.push_str(&format!(
            "\nLAST EXECUTION RESULT (failed, {}):\n{}\n",
            r.error_kind.map_or("error", |k| k.as_str()),
            r.output
        )),
        None => user.push_str("\nLAST EXECUTION RESULT: none\n"),
    }
    if !ctx.artifacts.is_empty() {
        user.push_str("\nKNOWN VALUES:\n");
        for a in &ctx.artifacts {
            user.push_str(&format!("- [{}] {}\n", a.kind.as_str(), a.value));
        }
    }
    ChatRequest::new(
        LlmRole::Corrector,
        vec![ChatMessage::system(corrector_system_prompt()), ChatMessage::user(user)],
        decode,
    )
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "violation", rename_all = "snake_case")]
pub enum PatchViolation {
    BlockCount { found: usize },
    NoApiCall,
    UndocumentedArgument { app: String, endpoint: String, argument: String },
}

impl fmt::Display for PatchViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PatchViolation::BlockCount { found } => write!(f, "expected exactly one code block, found {found}"),
            PatchViolation::NoApiCall => f.write_str("the patch makes no apis.* call"),
            PatchViolation::UndocumentedArgument { app, endpoint, argument } => {
                write!(f, "undocumented argument '{argument}' for apis.{app}.{endpoint}")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidatedPatch {
    pub code: String,
}

/// Checks the patch contract. All violations are reported.
///
/// Positional arguments, and calls to endpoints without a doc in `docs`,
/// cannot be checked and are accepted.
pub fn validate_patch(patch_text: &str, docs: &[ApiDoc]) -> Result<ValidatedPatch, Vec<PatchViolation>> {
    let blocks = fenced_blocks(patch_text);
    let mut violations = vec![];
    if blocks.len() != 1 {
        violations.push(PatchViolation::BlockCount { found: blocks.len() });
    }
    let code = if blocks.is_empty() {
        patch_text.to_string()
    } else {
        blocks.iter().map(|b| b.body).collect::<Vec<_>>().join("\n")
    };
    let calls = call_sites(&code);
    if calls.is_empty() {
        violations.push(PatchViolation::NoApiCall);
    }
    for call in &calls {
        let Some(doc) = docs.iter().find(|d| d.app == call.app && d.endpoint == call.endpoint) else {
            continue;
        };
        for kw in call.keywords() {
            if !doc.has_param(kw) {
                violations.push(PatchViolation::UndocumentedArgument {
                    app: call.app.clone(),
                    endpoint: call.endpoint.clone(),
                    argument: kw.to_string(),
                });
            }
        }
    }
    if violations.is_empty() {
        Ok(ValidatedPatch { code })
    } else {
        Err(violations)
    }
}

/// A patch that only reads documentation. Always satisfies the contract.
pub fn fallback_doc_query(refs: &[EndpointRef]) -> String {
    if refs.is_empty() {
        return fence("apis.api_docs.show_app_descriptions()");
    }
    let lines: Vec<String> = refs
        .iter()
        .map(|r| format!("apis.api_docs.show_api_doc({:?},{:?})", r.app, r.endpoint))
        .collect();
    fence(&lines.join("\n"))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorrectionOutcome {
    /// `None` when the corrector judged the code fine.
    pub category: Option<FailureCategory>,
    pub evidence: String,
    pub diagnosis: String,
    /// The fenced patch.
    pub patch: String,
    /// Body of the patch's single block.
    pub code: String,
    pub attempts: u32,
    pub fallback: bool,
}

/// A corrector completion split into its sections.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ParsedCorrection {
    pub category: Option<String>,
    pub evidence: String,
    pub diagnosis: String,
    pub patch: String,
}

pub fn parse_correction(text: &str) -> ParsedCorrection {
    let mut out = ParsedCorrection::default();
    let mut section: Option<&str> = None;
    let mut patch_lines: Vec<&str> = vec![];
    for line in text.lines() {
        let trimmed = line.trim_start();
        let upper = trimmed.to_ascii_uppercase();
        let header = ["CATEGORY:", "EVIDENCE:", "DIAGNOSIS:", "PATCH:"].into_iter().find(|h| upper.starts_with(h));
        if let (Some(h), true) = (header, section != Some("PATCH:") || !in_fence(&patch_lines)) {
            let rest = trimmed[h.len()..].trim();
            section = Some(h);
            match h {
                "CATEGORY:" => out.category = Some(rest.to_string()),
                "EVIDENCE:" => out.evidence = rest.to_string(),
                "DIAGNOSIS:" => out.diagnosis = rest.to_string(),
                _ => {
                    if !rest.is_empty() {
                        patch_lines.push(rest);
                    }
                }
            }
            continue;
        }
        match section {
            Some("EVIDENCE:") => push_line(&mut out.evidence, line),
            Some("DIAGNOSIS:") => push_line(&mut out.diagnosis, line),
            Some("PATCH:") => patch_lines.push(line),
            _ => {}
        }
    }
    out.patch = patch_lines.join("\n").trim().to_string();
    out
}

fn in_fence(lines: &[&str]) -> bool {
    lines.iter().filter(|l| l.trim_start().starts_with("```")).count() % 2 == 1
}

fn push_line(buf: &mut String, line: &str) {
    if line.trim().is_empty() {
        return;
    }
    if !buf.is_empty() {
        buf.push('\n');
    }
    buf.push_str(line.trim());
}

fn parse_category(raw: Option<&str>) -> Option<FailureCategory> {
    let raw = raw?.trim().trim_matches(|c| c == '`' || c == '*' || c == '"');
    if raw.is_empty() || raw.eq_ignore_ascii_case("none") {
        return None;
    }
    Some(FailureCategory::parse_label(raw).unwrap_or(FailureCategory::Other))
}

#[derive(Debug, Error)]
pub enum CorrectError {
    #[error("corrector call failed: {0}")]
    Gateway(#[from] GatewayError),
}

#[derive(Debug, Clone)]
pub struct Corrector {
    pub decode: DecodeParams,
    pub retries: u32,
}

impl Default for Corrector {
    fn default() -> Self {
        Corrector { decode: DecodeParams::default(), retries: 1 }
    }
}

impl Corrector {
    pub fn correct(&self, ctx: &CorrectionContext, gateway: &dyn ChatGateway) -> Result<CorrectionOutcome, CorrectError> {
        let first = build_correction_request(ctx, self.decode);
        let mut req = first.clone();
        let mut attempts = 0;
        let mut last_parsed = ParsedCorrection::default();
        while attempts <= self.retries {
            attempts += 1;
            let text = gateway.chat(&req)?.content;
            let parsed = parse_correction(&text);
            match validate_patch(&parsed.patch, &ctx.docs) {
                Ok(valid) => {
                    return Ok(CorrectionOutcome {
                        category: parse_category(parsed.category.as_deref()),
                        evidence: parsed.evidence,
                        diagnosis: parsed.diagnosis,
                        patch: fence(&valid.code),
                        code: valid.code,
                        attempts,
                        fallback: false,
                    })
                }
                Err(violations) => {
                    req = first.clone();
                    req.messages.push(ChatMessage::assistant(text));
                    let list: Vec<String> = violations.iter().map(|v| format!("- {v}")).collect();
                    req.messages.push(ChatMessage::user(format!(
                        "The patch breaks the contract:\n{}\nReply again in the required format.",
                        list.join("\n")
                    )));
                    last_parsed = parsed;
                }
            }
        }
        let patch = fallback_doc_query(&referenced_endpoints(&ctx.proposed_code));
        let code = fenced_blocks(&patch)[0].body.to_string();
        Ok(CorrectionOutcome {
            category: parse_category(last_parsed.category.as_deref()),
            evidence: last_parsed.evidence,
            diagnosis: "No valid patch after retry; querying documentation instead.".into(),
            patch,
            code,
            attempts,
            fallback: true,
        })
    }
}
