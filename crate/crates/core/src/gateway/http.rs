use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{ChatGateway, ChatRequest, Completion, GatewayError, LlmRole, Usage};

static NETWORK_CALLS: AtomicU64 = AtomicU64::new(0);

/// Number of HTTP attempts made by every [`HttpGateway`] in this process.
pub fn network_calls() -> u64 {
    NETWORK_CALLS.load(Ordering::SeqCst)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmEndpointConfig {
    pub role: LlmRole,
    pub base_url: String,
    pub model_name: String,
    #[serde(default = "default_timeout")]
    pub timeout_s: f64,
}

fn default_timeout() -> f64 {
    120.0
}

impl LlmEndpointConfig {
    pub fn new(role: LlmRole, base_url: impl Into<String>, model_name: impl Into<String>) -> Self {
        LlmEndpointConfig { role, base_url: base_url.into(), model_name: model_name.into(), timeout_s: default_timeout() }
    }

    /// `{base}/v1/chat/completions`, tolerating a trailing `/` or `/v1`.
    pub fn completions_url(&self) -> String {
        let base = self.base_url.trim_end_matches('/');
        let base = base.strip_suffix("/v1").unwrap_or(base);
        format!("{base}/v1/chat/completions")
    }
}

/// Blocking client for OpenAI-compatible `/v1/chat/completions` endpoints,
/// one endpoint per role.
pub struct HttpGateway {
    endpoints: BTreeMap<LlmRole, LlmEndpointConfig>,
    client: reqwest::blocking::Client,
    api_key: Option<String>,
    max_retries: u32,
    backoff: Duration,
    calls: AtomicU64,
}

impl HttpGateway {
    pub fn new(endpoints: impl IntoIterator<Item = LlmEndpointConfig>) -> Result<Self, GatewayError> {
        let mut map = BTreeMap::new();
        for cfg in endpoints {
            if cfg.base_url.trim().is_empty() {
                return Err(GatewayError::InvalidRequest { role: cfg.role, reason: "empty base_url".into() });
            }
            if map.insert(cfg.role, cfg.clone()).is_some() {
                return Err(GatewayError::InvalidRequest { role: cfg.role, reason: "duplicate endpoint config".into() });
            }
        }
        let client = reqwest::blocking::Client::builder()
            .build()
            .map_err(|e| GatewayError::Store(format!("building HTTP client: {e}")))?;
        Ok(HttpGateway {
            endpoints: map,
            client,
            api_key: std::env::var("SCAFFOLD_API_KEY").ok().filter(|k| !k.is_empty()),
            max_retries: 2,
            backoff: Duration::from_millis(500),
            calls: AtomicU64::new(0),
        })
    }

    pub fn with_backoff(mut self, backoff: Duration) -> Self {
        self.backoff = backoff;
        self
    }

    pub fn with_api_key(mut self, key: Option<String>) -> Self {
        self.api_key = key;
        self
    }

    /// HTTP attempts made by this instance.
    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }

    fn attempt(&self, cfg: &LlmEndpointConfig, req: &ChatRequest, attempt: u32) -> Result<Completion, GatewayError> {
        let role = req.role_target;
        self.calls.fetch_add(1, Ordering::SeqCst);
        NETWORK_CALLS.fetch_add(1, Ordering::SeqCst);

        let body = json!({
            "model": cfg.model_name,
            "messages": req.messages,
            "temperature": req.decode.temperature,
            "seed": req.decode.seed,
            "max_tokens": req.decode.max_completion_tokens,
        });
        let mut builder = self
            .client
            .post(cfg.completions_url())
            .timeout(Duration::from_secs_f64(cfg.timeout_s.max(0.001)))
            .json(&body);
        if let Some(key) = &self.api_key {
            builder = builder.bearer_auth(key);
        }
        let resp = builder.send().map_err(|e| {
            if e.is_timeout() {
                GatewayError::Timeout { role, attempts: attempt }
            } else {
                GatewayError::Connect { role, attempts: attempt, message: e.to_string() }
            }
        })?;
        let status = resp.status();
        let text = resp.text().map_err(|e| {
            if e.is_timeout() {
                GatewayError::Timeout { role, attempts: attempt }
            } else {
                GatewayError::MalformedBody { role, attempts: attempt, message: e.to_string() }
            }
        })?;
        if !status.is_success() {
            let body: String = text.chars().take(500).collect();
            return Err(GatewayError::Status { role, status: status.as_u16(), attempts: attempt, body });
        }
        parse_completion(&text).map_err(|message| GatewayError::MalformedBody { role, attempts: attempt, message })
    }
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
    #[serde(default)]
    usage: Option<Usage>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
    #[serde(default)]
    finish_reason: Option<String>,
}

#[derive(Deserialize)]
struct WireMessage {
    #[serde(default)]
    content: Option<String>,
}

fn parse_completion(text: &str) -> Result<Completion, String> {
    let wire: WireResponse = serde_json::from_str(text).map_err(|e| e.to_string())?;
    let choice = wire.choices.into_iter().next().ok_or("response has no choices")?;
    Ok(Completion {
        content: choice.message.content.unwrap_or_default(),
        finish_reason: choice.finish_reason.unwrap_or_else(|| "stop".into()),
        usage: wire.usage.unwrap_or_default(),
    })
}

impl ChatGateway for HttpGateway {
    fn chat(&self, req: &ChatRequest) -> Result<Completion, GatewayError> {
        req.validate()?;
        let cfg = self
            .endpoints
            .get(&req.role_target)
            .ok_or(GatewayError::NoEndpoint { role: req.role_target })?;
        let mut delay = self.backoff;
        let mut attempt = 1;
        loop {
            match self.attempt(cfg, req, attempt) {
                Ok(c) => return Ok(c),
                Err(e) if e.is_transient() && attempt <= self.max_retries => {
                    std::thread::sleep(delay);
                    delay *= 2;
                    attempt += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn url_normalisation() {
        let mut cfg = LlmEndpointConfig::new(LlmRole::Agent, "http://localhost:8000/v1/", "m");
        assert_eq!(cfg.completions_url(), "http://localhost:8000/v1/chat/completions");
        cfg.base_url = "http://h:1".into();
        assert_eq!(cfg.completions_url(), "http://h:1/v1/chat/completions");
    }

    #[test]
    fn parses_openai_body() {
        let c = parse_completion(
            r#"{"id":"x","choices":[{"index":0,"message":{"role":"assistant","content":"hi"},"finish_reason":"length"}],"usage":{"prompt_tokens":3,"completion_tokens":1,"total_tokens":4}}"#,
        )
        .unwrap();
        assert_eq!(c.content, "hi");
        assert_eq!(c.finish_reason, "length");
        assert_eq!(c.usage, Usage { prompt_tokens: 3, completion_tokens: 1 });
        assert!(parse_completion(r#"{"choices":[]}"#).is_err());
        assert!(parse_completion("not json").is_err());
    }

    #[test]
    fn rejects_empty_base_url_and_duplicates() {
        assert!(HttpGateway::new([LlmEndpointConfig::new(LlmRole::Agent, " ", "m")]).is_err());
        let a = LlmEndpointConfig::new(LlmRole::Agent, "http://a", "m");
        assert!(HttpGateway::new([a.clone(), a]).is_err());
    }
}
