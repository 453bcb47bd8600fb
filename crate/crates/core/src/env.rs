//! The environment side of an episode: observations, API documentation and
//! the interface every environment (built-in or external) implements.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// `apis.<app>.<endpoint>` reference.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EndpointRef {
    pub app: String,
    pub endpoint: String,
}

impl EndpointRef {
    pub fn new(app: impl Into<String>, endpoint: impl Into<String>) -> Self {
        EndpointRef { app: app.into(), endpoint: endpoint.into() }
    }
}

impl fmt::Display for EndpointRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.app, self.endpoint)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiParam {
    pub name: String,
    #[serde(rename = "type")]
    pub ty: String,
    pub required: bool,
}

/// Documentation for one endpoint.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiDoc {
    pub app: String,
    pub endpoint: String,
    pub parameters: Vec<ApiParam>,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("duplicate parameter `{0}` in API doc")]
pub struct DuplicateParam(pub String);

impl ApiDoc {
    pub fn new(
        app: impl Into<String>,
        endpoint: impl Into<String>,
        parameters: Vec<ApiParam>,
        description: impl Into<String>,
    ) -> Result<Self, DuplicateParam> {
        let doc = ApiDoc { app: app.into(), endpoint: endpoint.into(), parameters, description: description.into() };
        doc.check()?;
        Ok(doc)
    }

    pub fn check(&self) -> Result<(), DuplicateParam> {
        let mut seen = std::collections::HashSet::new();
        for p in &self.parameters {
            if !seen.insert(p.name.as_str()) {
                return Err(DuplicateParam(p.name.clone()));
            }
        }
        Ok(())
    }

    pub fn endpoint_ref(&self) -> EndpointRef {
        EndpointRef::new(&self.app, &self.endpoint)
    }

    pub fn has_param(&self, name: &str) -> bool {
        self.parameters.iter().any(|p| p.name == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    AuthRequired,
    InvalidCredentials,
    UnknownEndpoint,
    SchemaMismatch,
    PaginationBound,
    Runtime,
}

impl ErrorKind {
    pub const ALL: [ErrorKind; 6] = [
        ErrorKind::AuthRequired,
        ErrorKind::InvalidCredentials,
        ErrorKind::UnknownEndpoint,
        ErrorKind::SchemaMismatch,
        ErrorKind::PaginationBound,
        ErrorKind::Runtime,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ErrorKind::AuthRequired => "auth_required",
            ErrorKind::InvalidCredentials => "invalid_credentials",
            ErrorKind::UnknownEndpoint => "unknown_endpoint",
            ErrorKind::SchemaMismatch => "schema_mismatch",
            ErrorKind::PaginationBound => "pagination_bound",
            ErrorKind::Runtime => "runtime",
        }
    }
}

impl fmt::Display for ErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub app: String,
    pub endpoint: String,
    /// `"ok"` or the error kind name.
    pub status: String,
}

/// One observation. `ok` holds exactly when `error_kind` is absent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionResult {
    pub ok: bool,
    pub output: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_kind: Option<ErrorKind>,
    #[serde(default)]
    pub api_trace: Vec<TraceEntry>,
}

/// The call that ends an episode from the environment's side.
pub const COMPLETION_ENDPOINT: (&str, &str) = ("supervisor", "complete_task");

impl ExecutionResult {
    pub fn success(output: impl Into<String>, api_trace: Vec<TraceEntry>) -> Self {
        ExecutionResult { ok: true, output: output.into(), error_kind: None, api_trace }
    }

    pub fn failure(kind: ErrorKind, output: impl Into<String>, api_trace: Vec<TraceEntry>) -> Self {
        ExecutionResult { ok: false, output: output.into(), error_kind: Some(kind), api_trace }
    }

    pub fn is_consistent(&self) -> bool {
        self.ok == self.error_kind.is_none()
    }

    /// Whether this observation includes a successful completion call.
    pub fn signals_completion(&self) -> bool {
        self.api_trace
            .iter()
            .any(|t| t.app == COMPLETION_ENDPOINT.0 && t.endpoint == COMPLETION_ENDPOINT.1 && t.status == "ok")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Evaluation {
    pub reward: u8,
    pub checks_passed: usize,
    pub checks_total: usize,
}

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("unknown task `{0}`")]
    UnknownTask(String),
    #[error("invalid task fixture: {0}")]
    Fixture(String),
    #[error("no active episode; call reset first")]
    NotActive,
    #[error("adapter: {0}")]
    Adapter(String),
    #[error("adapter protocol: {0}")]
    Protocol(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Anything an episode can run against.
pub trait Environment: Send {
    /// Starts a fresh episode and returns the first observation.
    fn reset(&mut self, task_id: &str) -> Result<ExecutionResult, EnvError>;
    fn execute(&mut self, code: &str) -> Result<ExecutionResult, EnvError>;
    fn evaluate(&mut self) -> Result<Evaluation, EnvError>;
    fn api_doc(&mut self, endpoint: &EndpointRef) -> Result<Option<ApiDoc>, EnvError>;
}

impl<E: Environment + ?Sized> Environment for Box<E> {
    fn reset(&mut self, task_id: &str) -> Result<ExecutionResult, EnvError> {
        (**self).reset(task_id)
    }
    fn execute(&mut self, code: &str) -> Result<ExecutionResult, EnvError> {
        (**self).execute(code)
    }
    fn evaluate(&mut self) -> Result<Evaluation, EnvError> {
        (**self).evaluate()
    }
    fn api_doc(&mut self, endpoint: &EndpointRef) -> Result<Option<ApiDoc>, EnvError> {
        (**self).api_doc(endpoint)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn doc_rejects_duplicate_params() {
        let p = |n: &str| ApiParam { name: n.into(), ty: "string".into(), required: true };
        assert!(ApiDoc::new("mail", "send", vec![p("to"), p("body")], "").is_ok());
        assert_eq!(ApiDoc::new("mail", "send", vec![p("to"), p("to")], ""), Err(DuplicateParam("to".into())));
    }

    #[test]
    fn completion_signal() {
        let t = |status: &str| TraceEntry { app: "supervisor".into(), endpoint: "complete_task".into(), status: status.into() };
        assert!(ExecutionResult::success("", vec![t("ok")]).signals_completion());
        assert!(!ExecutionResult::success("", vec![t("runtime")]).signals_completion());
        assert!(ExecutionResult::failure(ErrorKind::Runtime, "x", vec![]).is_consistent());
    }
}
