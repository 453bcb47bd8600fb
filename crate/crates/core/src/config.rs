//! Run configuration, read from TOML with flag and environment overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{AgentConfig, ConfigLabel};
use crate::gateway::{DecodeParams, LlmEndpointConfig, LlmRole};
use crate::transcript::SummarizationPolicy;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("parsing {path}: {source}")]
    Parse { path: PathBuf, source: Box<toml::de::Error> },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum GatewayMode {
    /// Call the model backend directly.
    #[default]
    Live,
    /// Call the backend and store every completion in the fixture directory.
    Record,
    /// Answer only from the fixture directory.
    Replay,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    /// OpenAI-compatible HTTP endpoints, one per role.
    #[default]
    Http,
    /// The built-in scripted model that drives the bundled tasks.
    Synthetic,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnvSelection {
    /// The in-process world. `tasks` is a directory of task files; without
    /// it the bundled tasks are used.
    Miniworld {
        #[serde(default)]
        tasks: Option<PathBuf>,
    },
    /// An external environment reached through the adapter protocol.
    Adapter { address: String },
}

impl Default for EnvSelection {
    fn default() -> Self {
        EnvSelection::Miniworld { tasks: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EndpointSection {
    pub base_url: String,
    pub model: String,
    #[serde(default)]
    pub timeout_s: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Endpoints {
    pub agent: Option<EndpointSection>,
    pub summarizer: Option<EndpointSection>,
    pub corrector: Option<EndpointSection>,
    pub judge: Option<EndpointSection>,
}

impl Endpoints {
    fn slot(&mut self, role: LlmRole) -> &mut Option<EndpointSection> {
        match role {
            LlmRole::Agent => &mut self.agent,
            LlmRole::Summarizer => &mut self.summarizer,
            LlmRole::Corrector => &mut self.corrector,
            LlmRole::Judge => &mut self.judge,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub label: ConfigLabel,
    pub seed: u64,
    pub temperature: f64,
    pub max_completion_tokens: u32,
    pub max_turns: Option<u32>,
    pub mode: GatewayMode,
    pub backend: Backend,
    pub fixtures: Option<PathBuf>,
    pub output: PathBuf,
    pub parallel: usize,
    /// Restrict the run to these task ids. Required with an adapter.
    pub tasks: Vec<String>,
    pub selective_artifact_injection: bool,
    pub context_limit_tokens: usize,
    pub policy: SummarizationPolicy,
    pub env: EnvSelection,
    pub endpoints: Endpoints,
}

impl Default for RunConfig {
    fn default() -> Self {
        let decode = DecodeParams::default();
        let agent = AgentConfig::new(ConfigLabel::FullScaffold);
        RunConfig {
            label: ConfigLabel::FullScaffold,
            seed: decode.seed,
            temperature: decode.temperature,
            max_completion_tokens: decode.max_completion_tokens,
            max_turns: None,
            mode: GatewayMode::Live,
            backend: Backend::Http,
            fixtures: None,
            output: PathBuf::from("trajectories.jsonl"),
            parallel: 1,
            tasks: vec![],
            selective_artifact_injection: agent.selective_artifact_injection,
            context_limit_tokens: agent.context_limit_tokens,
            policy: SummarizationPolicy::default(),
            env: EnvSelection::default(),
            endpoints: Endpoints::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str, path: &Path) -> Result<Self, ConfigError> {
        let mut cfg: RunConfig =
            toml::from_str(text).map_err(|e| ConfigError::Parse { path: path.to_path_buf(), source: Box::new(e) })?;
        cfg.resolve_relative(path.parent().unwrap_or(Path::new("")));
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| ConfigError::Io { path: path.to_path_buf(), source: e })?;
        Self::from_toml_str(&text, path)
    }

    /// Paths in a config file are relative to the file.
    fn resolve_relative(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(f) = &mut self.fixtures {
            fix(f);
        }
        fix(&mut self.output);
        if let EnvSelection::Miniworld { tasks: Some(t) } = &mut self.env {
            fix(t);
        }
    }

    /// `SCAFFOLD_<ROLE>_BASE_URL` and `SCAFFOLD_<ROLE>_MODEL` override the
    /// endpoint of that role.
    pub fn apply_env_overrides(&mut self, lookup: impl Fn(&str) -> Option<String>) {
        for role in LlmRole::ALL {
            let upper = role.as_str().to_ascii_uppercase();
            let url = lookup(&format!("SCAFFOLD_{upper}_BASE_URL"));
            let model = lookup(&format!("SCAFFOLD_{upper}_MODEL"));
            let slot = self.endpoints.slot(role);
            match (slot.as_mut(), url, model) {
                (_, None, None) => {}
                (Some(ep), url, model) => {
                    if let Some(u) = url {
                        ep.base_url = u;
                    }
                    if let Some(m) = model {
                        ep.model = m;
                    }
                }
                (None, Some(u), model) => {
                    *slot = Some(EndpointSection { base_url: u, model: model.unwrap_or_default(), timeout_s: None })
                }
                (None, None, Some(_)) => {}
            }
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if matches!(self.mode, GatewayMode::Replay | GatewayMode::Record) && self.fixtures.is_none() {
            return bad("replay and record modes need a fixture directory (`fixtures`)");
        }
        if self.mode == GatewayMode::Replay && !self.fixtures.as_ref().is_some_and(|f| f.is_dir()) {
            return Err(ConfigError::Invalid(format!(
                "fixture directory {} does not exist",
                self.fixtures.as_ref().expect("checked").display()
            )));
        }
        if self.policy.head_n == 0 && self.policy.tail_k == 0 {
            return bad("summarization policy keeps no messages");
        }
        if self.max_turns == Some(0) {
            return bad("max_turns must be positive");
        }
        if matches!(self.env, EnvSelection::Adapter { .. }) && self.tasks.is_empty() {
            return bad("an adapter environment needs an explicit `tasks` list");
        }
        self.decode().validate().map_err(ConfigError::Invalid)?;
        if self.mode != GatewayMode::Replay && self.backend == Backend::Http {
            for role in [LlmRole::Agent, LlmRole::Summarizer, LlmRole::Corrector] {
                let needed = match role {
                    LlmRole::Summarizer => self.label.summarizes(),
                    LlmRole::Corrector => self.label.corrects(),
                    _ => true,
                };
                if needed && self.endpoint(role).is_none() {
                    return Err(ConfigError::Invalid(format!("no endpoint configured for role {}", role.as_str())));
                }
            }
        }
        Ok(())
    }

    pub fn decode(&self) -> DecodeParams {
        DecodeParams { temperature: self.temperature, seed: self.seed, max_completion_tokens: self.max_completion_tokens }
    }

    pub fn agent_config(&self) -> AgentConfig {
        AgentConfig {
            label: self.label,
            decode: self.decode(),
            policy: self.policy,
            max_turns: self.max_turns,
            selective_artifact_injection: self.selective_artifact_injection,
            context_limit_tokens: self.context_limit_tokens,
        }
    }

    pub fn endpoint(&self, role: LlmRole) -> Option<&EndpointSection> {
        match role {
            LlmRole::Agent => self.endpoints.agent.as_ref(),
            LlmRole::Summarizer => self.endpoints.summarizer.as_ref(),
            LlmRole::Corrector => self.endpoints.corrector.as_ref(),
            LlmRole::Judge => self.endpoints.judge.as_ref(),
        }
    }

    pub fn endpoint_configs(&self) -> Vec<LlmEndpointConfig> {
        LlmRole::ALL
            .into_iter()
            .filter_map(|role| {
                self.endpoint(role).map(|e| {
                    let mut c = LlmEndpointConfig::new(role, &e.base_url, &e.model);
                    if let Some(t) = e.timeout_s {
                        c.timeout_s = t;
                    }
                    c
                })
            })
            .collect()
    }
}
