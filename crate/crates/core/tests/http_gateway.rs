//! The HTTP gateway against a local OpenAI-compatible mock.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde_json::{json, Value};

use scaffold_core::agent::{run_episode, AgentConfig, ConfigLabel};
use scaffold_core::gateway::{
    ChatGateway, ChatMessage, ChatRequest, DecodeParams, GatewayError, HttpGateway, LlmEndpointConfig, LlmRole,
    ReplayGateway,
};
use scaffold_core::miniworld::MiniWorld;
use scaffold_core::synthetic::SyntheticModel;

#[derive(Debug, Clone)]
struct Seen {
    path: String,
    authorization: Option<String>,
    body: Value,
}

/// What the mock does with one request: status, body, delay.
type Handler = dyn Fn(usize, &Value) -> (u16, String, Duration) + Send + Sync;

fn read_request(stream: &mut TcpStream) -> Option<Seen> {
    let mut reader = BufReader::new(stream.try_clone().ok()?);
    let mut line = String::new();
    reader.read_line(&mut line).ok()?;
    let path = line.split_whitespace().nth(1)?.to_string();
    let (mut len, mut authorization) = (0, None);
    loop {
        let mut h = String::new();
        reader.read_line(&mut h).ok()?;
        let h = h.trim_end();
        if h.is_empty() {
            break;
        }
        let (name, value) = h.split_once(':')?;
        match name.to_ascii_lowercase().as_str() {
            "content-length" => len = value.trim().parse().ok()?,
            "authorization" => authorization = Some(value.trim().to_string()),
            _ => {}
        }
    }
    let mut body = vec![0; len];
    reader.read_exact(&mut body).ok()?;
    Some(Seen { path, authorization, body: serde_json::from_slice(&body).ok()? })
}

fn mock(handler: Arc<Handler>) -> (String, Arc<Mutex<Vec<Seen>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1", listener.local_addr().unwrap());
    let seen = Arc::new(Mutex::new(vec![]));
    let log = seen.clone();
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { continue };
            let log = log.clone();
            let handler = handler.clone();
            std::thread::spawn(move || {
                let Some(req) = read_request(&mut stream) else { return };
                let n = {
                    let mut l = log.lock().unwrap();
                    l.push(req.clone());
                    l.len() - 1
                };
                let (status, body, delay) = handler(n, &req.body);
                std::thread::sleep(delay);
                let _ = write!(
                    stream,
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                );
            });
        }
    });
    (url, seen)
}

fn ok_body(content: &str) -> String {
    json!({
        "choices": [{"message": {"role": "assistant", "content": content}, "finish_reason": "stop"}],
        "usage": {"prompt_tokens": 12, "completion_tokens": 3}
    })
    .to_string()
}

fn req() -> ChatRequest {
    ChatRequest::new(LlmRole::Agent, vec![ChatMessage::system("s"), ChatMessage::user("hi")], DecodeParams::default())
}

fn gateway(url: &str, timeout_s: f64) -> HttpGateway {
    let mut cfg = LlmEndpointConfig::new(LlmRole::Agent, url, "test-model");
    cfg.timeout_s = timeout_s;
    HttpGateway::new([cfg]).unwrap().with_backoff(Duration::from_millis(5)).with_api_key(Some("sk-test".into()))
}

#[test]
fn sends_openai_body_with_pinned_decode() {
    let (url, seen) = mock(Arc::new(|_, _| (200, ok_body("hello"), Duration::ZERO)));
    let c = gateway(&url, 5.0).chat(&req()).unwrap();
    assert_eq!(c.content, "hello");
    assert_eq!(c.usage.completion_tokens, 3);
    let seen = seen.lock().unwrap();
    let s = &seen[0];
    assert_eq!(s.path, "/v1/chat/completions");
    assert_eq!(s.authorization.as_deref(), Some("Bearer sk-test"));
    assert_eq!(s.body["model"], "test-model");
    assert_eq!(s.body["temperature"], 0.0);
    assert_eq!(s.body["seed"], 100);
    assert_eq!(s.body["max_tokens"], 3000);
    assert_eq!(s.body["messages"][1]["content"], "hi");
}

#[test]
fn retries_server_errors_then_succeeds() {
    let (url, seen) = mock(Arc::new(|n, _| if n < 2 { (503, "busy".into(), Duration::ZERO) } else { (200, ok_body("ok"), Duration::ZERO) }));
    let gw = gateway(&url, 5.0);
    assert_eq!(gw.chat(&req()).unwrap().content, "ok");
    assert_eq!(gw.calls(), 3);
    assert_eq!(seen.lock().unwrap().len(), 3);
}

#[test]
fn client_errors_are_not_retried() {
    let (url, _) = mock(Arc::new(|_, _| (400, "{\"error\":\"bad\"}".into(), Duration::ZERO)));
    let gw = gateway(&url, 5.0);
    match gw.chat(&req()) {
        Err(GatewayError::Status { status: 400, attempts: 1, .. }) => {}
        other => panic!("{other:?}"),
    }
    assert_eq!(gw.calls(), 1);
}

#[test]
fn malformed_body_is_reported() {
    let (url, _) = mock(Arc::new(|_, _| (200, "{\"choices\": 3}".into(), Duration::ZERO)));
    assert!(matches!(gateway(&url, 5.0).chat(&req()), Err(GatewayError::MalformedBody { .. })));
    let (url, _) = mock(Arc::new(|_, _| (200, "{\"choices\": []}".into(), Duration::ZERO)));
    assert!(matches!(gateway(&url, 5.0).chat(&req()), Err(GatewayError::MalformedBody { .. })));
}

#[test]
fn slow_server_times_out_after_retries() {
    let (url, _) = mock(Arc::new(|_, _| (200, ok_body("late"), Duration::from_millis(600))));
    let gw = gateway(&url, 0.1);
    match gw.chat(&req()) {
        Err(GatewayError::Timeout { attempts: 3, .. }) => {}
        other => panic!("{other:?}"),
    }
}

#[test]
fn unconfigured_role_makes_no_call() {
    let (url, seen) = mock(Arc::new(|_, _| (200, ok_body("x"), Duration::ZERO)));
    let gw = gateway(&url, 5.0);
    let mut r = req();
    r.role_target = LlmRole::Judge;
    assert!(matches!(gw.chat(&r), Err(GatewayError::NoEndpoint { role: LlmRole::Judge })));
    assert_eq!(gw.calls(), 0);
    assert!(seen.lock().unwrap().is_empty());
}

#[test]
fn refused_connection_is_a_connect_error() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let gw = gateway(&format!("http://127.0.0.1:{port}"), 1.0);
    assert!(matches!(gw.chat(&req()), Err(GatewayError::Connect { attempts: 3, .. })));
}

/// Serves the scripted model for one role.
fn model_server(role: LlmRole) -> String {
    let model = Arc::new(SyntheticModel::builtin());
    let (url, _) = mock(Arc::new(move |_, body: &Value| {
        let messages: Vec<ChatMessage> = serde_json::from_value(body["messages"].clone()).unwrap();
        let r = ChatRequest::new(role, messages, DecodeParams::default());
        match model.chat(&r) {
            Ok(c) => (200, ok_body(&c.content), Duration::ZERO),
            Err(e) => (500, e.to_string(), Duration::ZERO),
        }
    }));
    url
}

#[test]
fn live_episode_over_http_matches_replay() {
    let endpoints = [LlmRole::Agent, LlmRole::Summarizer, LlmRole::Corrector]
        .map(|role| LlmEndpointConfig::new(role, model_server(role), "scripted"));
    let http = HttpGateway::new(endpoints).unwrap();
    let replay = ReplayGateway::open(concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/replay")).unwrap();
    let world = MiniWorld::builtin();
    let task = world.task("d1_schema_bank").unwrap().task_spec();
    let config = AgentConfig::new(ConfigLabel::FullScaffold);
    let live = run_episode(&task, &config, &http, &mut MiniWorld::builtin());
    let replayed = run_episode(&task, &config, &replay, &mut MiniWorld::builtin());
    assert!(live.succeeded());
    assert_eq!(live.steps.len(), replayed.steps.len());
    for (a, b) in live.steps.iter().zip(&replayed.steps) {
        assert_eq!(a.corrected_code, b.corrected_code);
        assert_eq!(a.exec_output, b.exec_output);
    }
}
