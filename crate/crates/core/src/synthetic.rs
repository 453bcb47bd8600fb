//! A deterministic scripted stand-in for the served model, used to record
//! the shipped replay fixtures and to exercise the pipeline offline.
//!
//! The agent role follows a per-task script. It only "remembers" what is in
//! the recent part of its context (a fixed character window), so values
//! that scroll out of view must be fetched again unless a summary restates
//! them. The summarizer role restates the preserved values it is given. The
//! corrector role fixes single renamed keyword arguments and rewrites
//! identifiers it cannot see bound as placeholders.

use std::collections::HashMap;
use std::sync::OnceLock;

use regex::Regex;
use serde::Deserialize;

use crate::code::{call_sites, fenced_blocks};
use crate::env::ApiDoc;
use crate::evaluator::FailureCategory;
use crate::gateway::{ChatGateway, ChatRequest, ChatRole, Completion, GatewayError, LlmRole};
use crate::miniworld::TaskFixture;

pub const DEFAULT_WINDOW_CHARS: usize = 16_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OnError {
    /// Try the same step again.
    #[default]
    Repeat,
    Next,
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptStep {
    pub say: String,
    pub code: String,
    /// Placeholder keys (`token:mail`, `password:bank`) whose values this
    /// step's output reveals.
    #[serde(default)]
    pub provides: Vec<String>,
    #[serde(default)]
    pub on_error: OnError,
    /// Expands into this many steps with `{{i}}` set to 0, 1, ...
    #[serde(default)]
    pub repeat: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskScript {
    #[serde(default = "default_window")]
    pub window_chars: usize,
    pub steps: Vec<ScriptStep>,
}

fn default_window() -> usize {
    DEFAULT_WINDOW_CHARS
}

impl TaskScript {
    /// Steps with `repeat` unrolled.
    pub fn expanded(&self) -> Vec<ScriptStep> {
        let mut out = vec![];
        for s in &self.steps {
            match s.repeat {
                Some(n) => {
                    for i in 0..n {
                        out.push(ScriptStep { code: s.code.replace("{{i}}", &i.to_string()), repeat: None, ..s.clone() });
                    }
                }
                None => out.push(s.clone()),
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
struct Script {
    window_chars: usize,
    steps: Vec<ScriptStep>,
}

/// The scripted model. Keyed by task instruction.
#[derive(Debug, Clone, Default)]
pub struct SyntheticModel {
    scripts: HashMap<String, Script>,
}

impl SyntheticModel {
    /// Builds a model from the `[script]` tables of `tasks`. Tasks without a
    /// script are skipped.
    pub fn from_tasks<'a>(tasks: impl IntoIterator<Item = &'a TaskFixture>) -> Result<Self, String> {
        let mut scripts = HashMap::new();
        for t in tasks {
            let Some(raw) = &t.script else { continue };
            let script: TaskScript = raw.clone().try_into().map_err(|e| format!("{}: bad script: {e}", t.id))?;
            let steps = script.expanded();
            if steps.is_empty() {
                return Err(format!("{}: script has no steps", t.id));
            }
            scripts.insert(t.instruction.clone(), Script { window_chars: script.window_chars, steps });
        }
        Ok(SyntheticModel { scripts })
    }

    pub fn builtin() -> Self {
        Self::from_tasks(&crate::miniworld::builtin_tasks()).expect("built-in scripts are valid")
    }

    fn agent(&self, req: &ChatRequest) -> Result<String, GatewayError> {
        let backend = |message: String| GatewayError::Backend { role: LlmRole::Agent, message };
        let task = req
            .messages
            .get(1)
            .and_then(|m| m.content.strip_prefix("Task: "))
            .ok_or_else(|| backend("no task message".into()))?;
        let script = self.scripts.get(task).ok_or_else(|| backend(format!("no script for task `{task}`")))?;

        // the visible window: most recent messages that fit
        let rest = &req.messages[2..];
        let mut used = 0;
        let mut start = rest.len();
        while start > 0 {
            let len = rest[start - 1].content.chars().count();
            if used + len > script.window_chars && start < rest.len() {
                break;
            }
            used += len;
            start -= 1;
        }
        let visible = &rest[start..];
        let text: String = visible.iter().map(|m| m.content.as_str()).collect::<Vec<_>>().join("\n");

        let mut target = 0;
        for (i, m) in visible.iter().enumerate().rev() {
            if m.role != ChatRole::Assistant {
                continue;
            }
            if let Some(n) = step_marker(&m.content) {
                let failed = visible.get(i + 1).is_some_and(|o| is_error_output(&o.content));
                let repeat = failed && script.steps.get(n).is_some_and(|s| s.on_error == OnError::Repeat);
                target = if repeat { n } else { n + 1 };
                break;
            }
        }
        target = target.min(script.steps.len() - 1);

        let mut refetch = None;
        for _ in 0..=script.steps.len() {
            match resolve(&script.steps[target].code, &text) {
                Ok(code) => {
                    let say = match &refetch {
                        Some(key) => format!("I no longer have the {} in view, so I need to fetch it again.", key),
                        None => script.steps[target].say.clone(),
                    };
                    return Ok(format!("{say}\n```python\n# step {target}\n{code}\n```"));
                }
                Err(key) => {
                    let provider = script.steps.iter().position(|s| s.provides.contains(&key));
                    match provider {
                        Some(p) if p != target => {
                            target = p;
                            refetch = Some(key.replace(':', " for "));
                        }
                        _ => return Err(backend(format!("cannot resolve `{key}` and no step provides it"))),
                    }
                }
            }
        }
        Err(backend("placeholder providers form a cycle".into()))
    }
}

fn step_marker(text: &str) -> Option<usize> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| Regex::new(r"# step (\d+)").expect("static regex"));
    re.captures_iter(text).last().and_then(|c| c[1].parse().ok())
}

fn is_error_output(text: &str) -> bool {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| {
        Regex::new(r"(?m)^(AuthRequired|InvalidCredentials|UnknownEndpoint|SchemaMismatch|PaginationBound|RuntimeError|FormatError):")
            .expect("static regex")
    });
    re.is_match(text)
}

/// Fills `{{token:app}}` and `{{password:app}}` from the visible text.
/// Returns the first key that cannot be filled.
fn resolve(code: &str, visible: &str) -> Result<String, String> {
    static PH: OnceLock<Regex> = OnceLock::new();
    let ph = PH.get_or_init(|| Regex::new(r"\{\{(token|password):([a-z_]+)\}\}").expect("static regex"));
    let mut out = code.to_string();
    for cap in ph.captures_iter(code) {
        let (kind, app) = (&cap[1], &cap[2]);
        let value = match kind {
            "token" => Regex::new(&format!(r"\b{app}-[0-9a-f]{{12}}\b"))
                .expect("token regex")
                .find_iter(visible)
                .last()
                .map(|m| m.as_str().to_string()),
            _ => Regex::new(&format!(r#""account_name":"{app}","password":"([^"]*)""#))
                .expect("password regex")
                .captures_iter(visible)
                .last()
                .map(|c| c[1].to_string()),
        };
        match value {
            Some(v) => out = out.replace(&cap[0], &v),
            None => return Err(format!("{kind}:{app}")),
        }
    }
    Ok(out)
}

fn summarize(req: &ChatRequest) -> String {
    let user = req.messages.iter().find(|m| m.role == ChatRole::User).map_or("", |m| m.content.as_str());
    let values = user
        .strip_prefix("PRESERVE VERBATIM:\n")
        .and_then(|s| s.split("\n\nHISTORY TO SUMMARIZE:").next())
        .unwrap_or("");
    static TURN: OnceLock<Regex> = OnceLock::new();
    let turn = TURN.get_or_init(|| Regex::new(r"\[turn (\d+) \|").expect("static regex"));
    let turns: Vec<&str> = turn.captures_iter(user).map(|c| c.get(1).map_or("", |m| m.as_str())).collect();
    let span = match (turns.first(), turns.last()) {
        (Some(a), Some(b)) => format!("turns {a}-{b}"),
        _ => "the earlier turns".into(),
    };
    let lines: Vec<String> = values
        .lines()
        .filter_map(|l| l.strip_prefix("- ["))
        .filter_map(|l| l.split_once("] "))
        .map(|(kind, v)| format!("- {kind}: {v}"))
        .collect();
    if lines.is_empty() {
        format!("Progress over {span}: routine lookups, nothing that needs to be kept.")
    } else {
        format!("Progress over {span}: results were read and used. Values still needed:\n{}", lines.join("\n"))
    }
}

struct CorrectorInput {
    code: String,
    docs: Vec<ApiDoc>,
    failure: Option<String>,
    known: Vec<(String, String)>,
}

fn parse_corrector_input(req: &ChatRequest) -> CorrectorInput {
    let user = req.messages.iter().find(|m| m.role == ChatRole::User).map_or("", |m| m.content.as_str());
    let code = fenced_blocks(user).first().map(|b| b.body.to_string()).unwrap_or_default();
    let docs_section = user.split("API DOCUMENTATION:\n").nth(1).unwrap_or("");
    let docs_section = docs_section.split("\nLAST EXECUTION RESULT").next().unwrap_or("");
    let docs = docs_section.lines().filter_map(|l| serde_json::from_str::<ApiDoc>(l).ok()).collect();
    let failure = user
        .split("\nLAST EXECUTION RESULT (failed, ")
        .nth(1)
        .map(|s| s.split("\nKNOWN VALUES:").next().unwrap_or(s).to_string());
    let known = user
        .split("\nKNOWN VALUES:\n")
        .nth(1)
        .unwrap_or("")
        .lines()
        .filter_map(|l| l.strip_prefix("- ["))
        .filter_map(|l| l.split_once("] "))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();
    CorrectorInput { code, docs, failure, known }
}

fn is_plain_ident(s: &str) -> bool {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| Regex::new(r"^[A-Za-z_][A-Za-z0-9_]*$").expect("static regex"));
    re.is_match(s) && !matches!(s, "True" | "False" | "None")
}

fn bound_in(code: &str, name: &str) -> bool {
    Regex::new(&format!(r"(?m)^\s*{}\s*=[^=]", regex::escape(name))).expect("binding regex").is_match(code)
}

fn correct(req: &ChatRequest) -> String {
    let input = parse_corrector_input(req);
    let mut code = input.code.clone();
    let mut category = None;
    let mut evidence = input.failure.as_deref().and_then(|f| f.lines().nth(1)).unwrap_or("").to_string();
    let mut diagnosis = String::from("The code matches the documentation.");

    for call in call_sites(&input.code) {
        let Some(doc) = input.docs.iter().find(|d| d.app == call.app && d.endpoint == call.endpoint) else {
            continue;
        };
        let undocumented: Vec<&str> = call.keywords().filter(|k| !doc.has_param(k)).collect();
        let positional = call.args.iter().filter(|a| a.keyword.is_none()).count();
        let missing: Vec<&str> = doc
            .parameters
            .iter()
            .skip(positional)
            .filter(|p| p.required && !call.keywords().any(|k| k == p.name))
            .map(|p| p.name.as_str())
            .collect();
        if let ([bad], [want]) = (undocumented.as_slice(), missing.as_slice()) {
            let re = Regex::new(&format!(r"\b{}(\s*=[^=])", regex::escape(bad))).expect("kwarg regex");
            code = re.replace(&code, format!("{want}$1").as_str()).into_owned();
            category = Some(FailureCategory::ApiParamsSchema);
            if evidence.is_empty() {
                evidence = format!("apis.{}.{} documents `{want}` but not `{bad}`", call.app, call.endpoint);
            }
            diagnosis = format!("`{bad}` is not a parameter of apis.{}.{}; the documented name is `{want}`.", call.app, call.endpoint);
        }
        for arg in &call.args {
            let (Some(kw), value) = (&arg.keyword, arg.value.as_str()) else { continue };
            if !is_plain_ident(value) || bound_in(&input.code, value) {
                continue;
            }
            let known = input
                .known
                .iter()
                .find(|(kind, v)| kind == "auth_token" && kw.contains("token") && v.starts_with(&format!("{}-", call.app)));
            let replacement = match known {
                Some((_, v)) => format!("\"{v}\""),
                None => format!("\"<{value}>\""),
            };
            let re = Regex::new(&format!(r"\b{}\s*=\s*{}\b", regex::escape(kw), regex::escape(value))).expect("arg regex");
            code = re.replace(&code, format!("{kw}={replacement}").as_str()).into_owned();
            category = Some(if kw.contains("token") { FailureCategory::AuthCredentials } else { FailureCategory::Other });
            diagnosis = format!("`{value}` is not defined in this code, so `{kw}` has no value; filling it in.");
        }
    }
    let label = category.map_or("none", |c| c.label());
    if evidence.is_empty() {
        evidence = "none".into();
    }
    format!("CATEGORY: {label}\nEVIDENCE: {evidence}\nDIAGNOSIS: {diagnosis}\nPATCH:\n```python\n{code}\n```")
}

impl ChatGateway for SyntheticModel {
    fn chat(&self, req: &ChatRequest) -> Result<Completion, GatewayError> {
        let text = match req.role_target {
            LlmRole::Agent => self.agent(req)?,
            LlmRole::Summarizer => summarize(req),
            LlmRole::Corrector => correct(req),
            LlmRole::Judge => {
                return Err(GatewayError::Backend {
                    role: LlmRole::Judge,
                    message: "the scripted model does not act as judge".into(),
                })
            }
        };
        Ok(Completion::stop(text))
    }
}
