//! Chat-completions style HTTP backend for live runs.

use std::collections::BTreeMap;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{CallCounters, CallTag, CompletionRequest, CounterCell, LlmBackend, LlmError, Role};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpConfig {
    pub endpoint: String,
    pub model: String,
    #[serde(default, skip_serializing)]
    pub api_key: Option<String>,
    /// Per-tag model names; tags not listed use `model`.
    #[serde(default)]
    pub model_overrides: BTreeMap<CallTag, String>,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
    #[serde(default)]
    pub seed: Option<i64>,
}

fn default_timeout_secs() -> u64 {
    120
}

impl HttpConfig {
    /// Reads `ICE_LLM_ENDPOINT`, `ICE_LLM_MODEL` and `ICE_LLM_API_KEY`.
    pub fn from_env() -> Result<Self, LlmError> {
        let endpoint = std::env::var("ICE_LLM_ENDPOINT")
            .map_err(|_| LlmError::Http("ICE_LLM_ENDPOINT is not set".into()))?;
        let model = std::env::var("ICE_LLM_MODEL")
            .map_err(|_| LlmError::Http("ICE_LLM_MODEL is not set".into()))?;
        Ok(HttpConfig {
            endpoint,
            model,
            api_key: std::env::var("ICE_LLM_API_KEY").ok(),
            model_overrides: BTreeMap::new(),
            timeout_secs: default_timeout_secs(),
            seed: None,
        })
    }

    pub fn model_for(&self, tag: CallTag) -> &str {
        self.model_overrides
            .get(&tag)
            .map(String::as_str)
            .unwrap_or(&self.model)
    }

    pub fn request_body(&self, req: &CompletionRequest) -> Value {
        let mut messages = Vec::with_capacity(req.messages.len() + 1);
        if !req.system.is_empty() {
            messages.push(json!({"role": "system", "content": req.system}));
        }
        for m in &req.messages {
            let role = match m.role {
                Role::User => "user",
                Role::Assistant => "assistant",
            };
            messages.push(json!({"role": role, "content": m.content}));
        }
        let mut body = json!({"model": self.model_for(req.tag), "messages": messages});
        if let Some(seed) = self.seed {
            body["seed"] = json!(seed);
        }
        body
    }
}

pub struct HttpBackend {
    config: HttpConfig,
    agent: ureq::Agent,
    counters: CounterCell,
}

impl HttpBackend {
    pub fn new(config: HttpConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .http_status_as_error(true)
            .build()
            .new_agent();
        HttpBackend {
            config,
            agent,
            counters: CounterCell::default(),
        }
    }

    pub fn config(&self) -> &HttpConfig {
        &self.config
    }
}

pub(crate) fn map_ureq_error(e: ureq::Error) -> LlmError {
    match e {
        ureq::Error::Timeout(_) => LlmError::Timeout,
        other => LlmError::Http(other.to_string()),
    }
}

pub(crate) fn extract_content(body: &Value) -> Result<String, LlmError> {
    body.pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| LlmError::BadResponse("missing choices[0].message.content".into()))
}

impl LlmBackend for HttpBackend {
    fn complete(&self, req: &CompletionRequest) -> Result<String, LlmError> {
        self.counters.record(req.tag);
        let body = self.config.request_body(req);
        let mut call = self.agent.post(&self.config.endpoint);
        if let Some(key) = &self.config.api_key {
            call = call.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = call.send_json(&body).map_err(map_ureq_error)?;
        let value: Value = resp.body_mut().read_json().map_err(map_ureq_error)?;
        extract_content(&value)
    }

    fn counters(&self) -> CallCounters {
        self.counters.snapshot()
    }

    fn reset_counters(&self) {
        self.counters.reset();
    }
}
