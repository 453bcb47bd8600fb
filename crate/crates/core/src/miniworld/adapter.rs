//! The environment adapter protocol: newline-delimited JSON requests
//! `{"id", "method", "params"}` answered by `{"id", "result"}` or
//! `{"id", "error": {"code", "message"}}`.
//!
//! Methods: `initialize {task_id}`, `execute {code}`, `evaluate {}`,
//! `show_api_doc {app, endpoint}` and `shutdown {}`. Any [`Environment`]
//! can be served, and [`AdapterEnv`] is a client usable wherever an
//! environment is expected.

use std::io::{BufRead, BufReader, Write};
use std::net::TcpStream;
use std::process::{Child, Command, Stdio};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::env::{ApiDoc, EndpointRef, EnvError, Environment, Evaluation, ExecutionResult};

pub const PARSE_ERROR: i64 = -32700;
pub const INVALID_REQUEST: i64 = -32600;
pub const METHOD_NOT_FOUND: i64 = -32601;
pub const INVALID_PARAMS: i64 = -32602;
pub const UNKNOWN_TASK: i64 = -32001;
pub const NOT_ACTIVE: i64 = -32002;
pub const ENV_FAILURE: i64 = -32000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub id: u64,
    pub method: String,
    #[serde(default)]
    pub params: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RpcError {
    pub code: i64,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Response {
    pub id: Value,
    /// `Some(Value::Null)` for a present `null`, which is a valid result.
    #[serde(default, deserialize_with = "present", skip_serializing_if = "Option::is_none")]
    pub result: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<RpcError>,
}

fn present<'de, D: serde::Deserializer<'de>>(d: D) -> Result<Option<Value>, D::Error> {
    Value::deserialize(d).map(Some)
}

fn env_error(e: EnvError) -> RpcError {
    let code = match e {
        EnvError::UnknownTask(_) => UNKNOWN_TASK,
        EnvError::NotActive => NOT_ACTIVE,
        _ => ENV_FAILURE,
    };
    RpcError { code, message: e.to_string() }
}

fn param<'a>(params: &'a Value, name: &str) -> Result<&'a str, RpcError> {
    params
        .get(name)
        .and_then(Value::as_str)
        .ok_or_else(|| RpcError { code: INVALID_PARAMS, message: format!("missing string param `{name}`") })
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("protocol types serialize")
}

/// Handles one request. Returns `None` as the second element when the
/// session should end.
pub fn dispatch(env: &mut dyn Environment, req: &Request) -> (Response, bool) {
    let result = match req.method.as_str() {
        "initialize" => param(&req.params, "task_id").and_then(|t| env.reset(t).map(|r| to_value(&r)).map_err(env_error)),
        "execute" => param(&req.params, "code").and_then(|c| env.execute(c).map(|r| to_value(&r)).map_err(env_error)),
        "evaluate" => env.evaluate().map(|e| to_value(&e)).map_err(env_error),
        "show_api_doc" => param(&req.params, "app").and_then(|app| {
            let ep = param(&req.params, "endpoint")?;
            env.api_doc(&EndpointRef::new(app, ep)).map(|d| to_value(&d)).map_err(env_error)
        }),
        "shutdown" => Ok(json!({ "ok": true })),
        other => Err(RpcError { code: METHOD_NOT_FOUND, message: format!("unknown method `{other}`") }),
    };
    let id = json!(req.id);
    let keep_going = req.method != "shutdown";
    let resp = match result {
        Ok(v) => Response { id, result: Some(v), error: None },
        Err(e) => Response { id, result: None, error: Some(e) },
    };
    (resp, keep_going)
}

/// Serves `env` over a line-oriented stream until EOF or `shutdown`.
pub fn serve(env: &mut dyn Environment, reader: impl BufRead, mut writer: impl Write) -> std::io::Result<()> {
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let (resp, keep_going) = match serde_json::from_str::<Value>(&line) {
            Err(e) => (
                Response { id: Value::Null, result: None, error: Some(RpcError { code: PARSE_ERROR, message: e.to_string() }) },
                true,
            ),
            Ok(v) => {
                let id = v.get("id").cloned().unwrap_or(Value::Null);
                match serde_json::from_value::<Request>(v) {
                    Ok(req) => dispatch(env, &req),
                    Err(e) => (
                        Response {
                            id,
                            result: None,
                            error: Some(RpcError { code: INVALID_REQUEST, message: e.to_string() }),
                        },
                        true,
                    ),
                }
            }
        };
        writeln!(writer, "{}", serde_json::to_string(&resp).expect("response serializes"))?;
        writer.flush()?;
        if !keep_going {
            break;
        }
    }
    Ok(())
}

/// An environment on the other end of an adapter connection.
pub struct AdapterEnv {
    reader: Box<dyn BufRead + Send>,
    writer: Box<dyn Write + Send>,
    next_id: u64,
    child: Option<Child>,
}

impl AdapterEnv {
    pub fn from_streams(reader: impl BufRead + Send + 'static, writer: impl Write + Send + 'static) -> Self {
        AdapterEnv { reader: Box::new(reader), writer: Box::new(writer), next_id: 1, child: None }
    }

    /// Starts `program` and talks to it over its stdin and stdout.
    pub fn spawn(program: &str, args: &[String]) -> Result<Self, EnvError> {
        let mut child = Command::new(program).args(args).stdin(Stdio::piped()).stdout(Stdio::piped()).spawn()?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let mut env = Self::from_streams(BufReader::new(stdout), stdin);
        env.child = Some(child);
        Ok(env)
    }

    pub fn connect_tcp(addr: &str) -> Result<Self, EnvError> {
        let stream = TcpStream::connect(addr)?;
        let read = stream.try_clone()?;
        Ok(Self::from_streams(BufReader::new(read), stream))
    }

    #[cfg(unix)]
    pub fn connect_unix(path: &std::path::Path) -> Result<Self, EnvError> {
        let stream = std::os::unix::net::UnixStream::connect(path)?;
        let read = stream.try_clone()?;
        Ok(Self::from_streams(BufReader::new(read), stream))
    }

    /// Connects to `address`: `tcp:<host:port>`, `unix:<path>` or
    /// `stdio:<command> [args...]`.
    pub fn connect(address: &str) -> Result<Self, EnvError> {
        match address.split_once(':') {
            Some(("tcp", rest)) => Self::connect_tcp(rest),
            #[cfg(unix)]
            Some(("unix", rest)) => Self::connect_unix(std::path::Path::new(rest)),
            Some(("stdio", rest)) => {
                let mut parts = rest.split_whitespace().map(str::to_string);
                let program = parts.next().ok_or_else(|| EnvError::Adapter("empty stdio command".into()))?;
                Self::spawn(&program, &parts.collect::<Vec<_>>())
            }
            _ => Err(EnvError::Adapter(format!("unsupported adapter address `{address}`"))),
        }
    }

    /// Sends one request and returns the raw response.
    pub fn call_raw(&mut self, method: &str, params: Value) -> Result<Response, EnvError> {
        let id = self.next_id;
        self.next_id += 1;
        let req = Request { id, method: method.to_string(), params };
        writeln!(self.writer, "{}", serde_json::to_string(&req).expect("request serializes"))?;
        self.writer.flush()?;
        let mut line = String::new();
        if self.reader.read_line(&mut line)? == 0 {
            return Err(EnvError::Protocol("adapter closed the connection".into()));
        }
        let resp: Response =
            serde_json::from_str(line.trim_end()).map_err(|e| EnvError::Protocol(format!("malformed response: {e}")))?;
        if resp.id != json!(id) {
            return Err(EnvError::Protocol(format!("response id {} does not match request id {id}", resp.id)));
        }
        if resp.result.is_some() == resp.error.is_some() {
            return Err(EnvError::Protocol("response must carry exactly one of result and error".into()));
        }
        Ok(resp)
    }

    fn call<T: for<'de> Deserialize<'de>>(&mut self, method: &str, params: Value) -> Result<T, EnvError> {
        let resp = self.call_raw(method, params)?;
        if let Some(e) = resp.error {
            return Err(match e.code {
                UNKNOWN_TASK => EnvError::UnknownTask(e.message),
                NOT_ACTIVE => EnvError::NotActive,
                METHOD_NOT_FOUND | INVALID_PARAMS | INVALID_REQUEST | PARSE_ERROR => {
                    EnvError::Protocol(format!("{} ({})", e.message, e.code))
                }
                _ => EnvError::Adapter(e.message),
            });
        }
        let value = resp.result.expect("checked in call_raw");
        serde_json::from_value(value).map_err(|e| EnvError::Protocol(format!("bad {method} result: {e}")))
    }

    /// Asks the server to end the session.
    pub fn shutdown(&mut self) -> Result<(), EnvError> {
        self.call::<Value>("shutdown", json!({}))?;
        Ok(())
    }
}

impl Drop for AdapterEnv {
    fn drop(&mut self) {
        if self.child.is_some() {
            let _ = self.call_raw("shutdown", json!({}));
        }
        if let Some(child) = &mut self.child {
            let _ = child.wait();
        }
    }
}

impl Environment for AdapterEnv {
    fn reset(&mut self, task_id: &str) -> Result<ExecutionResult, EnvError> {
        self.call("initialize", json!({ "task_id": task_id }))
    }

    fn execute(&mut self, code: &str) -> Result<ExecutionResult, EnvError> {
        let r: ExecutionResult = self.call("execute", json!({ "code": code }))?;
        if !r.is_consistent() {
            return Err(EnvError::Protocol("execute result has ok and error_kind out of sync".into()));
        }
        Ok(r)
    }

    fn evaluate(&mut self) -> Result<Evaluation, EnvError> {
        let e: Evaluation = self.call("evaluate", json!({}))?;
        if e.reward > 1 || e.checks_passed > e.checks_total {
            return Err(EnvError::Protocol(format!("implausible evaluation {e:?}")));
        }
        Ok(e)
    }

    fn api_doc(&mut self, endpoint: &EndpointRef) -> Result<Option<ApiDoc>, EnvError> {
        self.call("show_api_doc", json!({ "app": endpoint.app, "endpoint": endpoint.endpoint }))
    }
}

/// Result of one conformance check.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConformanceCheck {
    pub name: &'static str,
    pub outcome: Result<(), String>,
}

/// The protocol conformance suite. `connect` must open a fresh session on
/// every call; `task_id` must be a task the server knows and `code` a
/// block it can execute.
pub fn conformance_suite(
    connect: &mut dyn FnMut() -> Result<AdapterEnv, EnvError>,
    task_id: &str,
    code: &str,
) -> Vec<ConformanceCheck> {
    let mut out = vec![];
    let mut check = |name: &'static str, f: &mut dyn FnMut() -> Result<(), String>| {
        out.push(ConformanceCheck { name, outcome: f() });
    };
    let err = |e: EnvError| e.to_string();

    check("initialize returns an observation", &mut || {
        let mut env = connect().map_err(err)?;
        let r = env.reset(task_id).map_err(err)?;
        (r.ok && !r.output.is_empty()).then_some(()).ok_or_else(|| format!("unexpected observation {r:?}"))
    });
    check("initialize is deterministic", &mut || {
        let mut env = connect().map_err(err)?;
        let a = env.reset(task_id).map_err(err)?;
        let b = env.reset(task_id).map_err(err)?;
        (a == b).then_some(()).ok_or_else(|| "two resets differ".into())
    });
    check("unknown task is reported", &mut || {
        let mut env = connect().map_err(err)?;
        match env.reset("__no_such_task__") {
            Err(EnvError::UnknownTask(_)) | Err(EnvError::Adapter(_)) => Ok(()),
            other => Err(format!("expected an error, got {other:?}")),
        }
    });
    check("execute before initialize fails", &mut || {
        let mut env = connect().map_err(err)?;
        match env.execute(code) {
            Err(EnvError::NotActive) | Err(EnvError::Adapter(_)) => Ok(()),
            other => Err(format!("expected an error, got {other:?}")),
        }
    });
    check("execute result is consistent", &mut || {
        let mut env = connect().map_err(err)?;
        env.reset(task_id).map_err(err)?;
        let r = env.execute(code).map_err(err)?;
        r.is_consistent().then_some(()).ok_or_else(|| "ok and error_kind disagree".into())
    });
    check("evaluate is well-formed", &mut || {
        let mut env = connect().map_err(err)?;
        env.reset(task_id).map_err(err)?;
        let e = env.evaluate().map_err(err)?;
        (e.checks_total >= 1 && e.reward == u8::from(e.checks_passed == e.checks_total))
            .then_some(())
            .ok_or_else(|| format!("bad evaluation {e:?}"))
    });
    check("show_api_doc answers", &mut || {
        let mut env = connect().map_err(err)?;
        env.reset(task_id).map_err(err)?;
        env.api_doc(&EndpointRef::new("api_docs", "show_api_doc")).map_err(err)?;
        match env.api_doc(&EndpointRef::new("__none__", "__none__")).map_err(err)? {
            None => Ok(()),
            Some(d) => Err(format!("doc for a nonexistent endpoint: {d:?}")),
        }
    });
    check("unknown method is a protocol error", &mut || {
        let mut env = connect().map_err(err)?;
        let resp = env.call_raw("teleport", json!({})).map_err(err)?;
        match resp.error {
            Some(e) if e.code == METHOD_NOT_FOUND => Ok(()),
            other => Err(format!("expected code {METHOD_NOT_FOUND}, got {other:?}")),
        }
    });
    check("ids correlate across calls", &mut || {
        let mut env = connect().map_err(err)?;
        for _ in 0..3 {
            env.call_raw("evaluate", json!({})).map_err(err)?;
        }
        Ok(())
    });
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::miniworld::MiniWorld;

    fn roundtrip(input: &str) -> Vec<Response> {
        let mut env = MiniWorld::builtin();
        let mut out = vec![];
        serve(&mut env, input.as_bytes(), &mut out).unwrap();
        String::from_utf8(out).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect()
    }

    #[test]
    fn serves_requests_in_order() {
        let r = roundtrip(
            "{\"id\":1,\"method\":\"initialize\",\"params\":{\"task_id\":\"d1_send_report\"}}\n\
             {\"id\":2,\"method\":\"evaluate\"}\n\
             {\"id\":3,\"method\":\"nope\"}\n\
             not json\n",
        );
        assert_eq!(r.len(), 4);
        assert_eq!(r[0].id, json!(1));
        assert!(r[1].result.is_some());
        assert_eq!(r[2].error.as_ref().unwrap().code, METHOD_NOT_FOUND);
        assert_eq!(r[3].error.as_ref().unwrap().code, PARSE_ERROR);
    }

    #[test]
    fn null_result_is_a_result() {
        let r: Response = serde_json::from_str("{\"id\":1,\"result\":null}").unwrap();
        assert_eq!(r.result, Some(Value::Null));
        let r: Response = serde_json::from_str("{\"id\":1,\"error\":{\"code\":-32000,\"message\":\"x\"}}").unwrap();
        assert_eq!(r.result, None);
    }

    #[test]
    fn shutdown_ends_session() {
        let r = roundtrip("{\"id\":1,\"method\":\"shutdown\"}\n{\"id\":2,\"method\":\"evaluate\"}\n");
        assert_eq!(r.len(), 1);
    }
}
