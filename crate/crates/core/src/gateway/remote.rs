//! OpenAI-compatible chat-completions backend with bounded retries.

use std::time::Duration;

use serde_json::{json, Value};

use super::{AssistantMessage, ChatBackend, ChatExchange, ChatMessage, GatewayError, Role, ToolCallRequest, Usage};
use crate::limit::InFlightLimit;

pub const ENV_API_BASE: &str = "EEL_API_BASE";
pub const ENV_API_KEY: &str = "EEL_API_KEY";
pub const ENV_MODEL: &str = "EEL_MODEL";

#[derive(Debug, Clone, PartialEq)]
pub struct RemoteConfig {
    pub base_url: String,
    pub api_key: Option<String>,
    pub model: String,
    pub timeout_ms: u64,
    pub max_retries: u32,
    pub backoff_ms: u64,
    pub max_in_flight: usize,
}

impl RemoteConfig {
    pub fn new(base_url: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            api_key: None,
            model: "default".into(),
            timeout_ms: 60_000,
            max_retries: 3,
            backoff_ms: 250,
            max_in_flight: 4,
        }
    }

    /// Explicit values win over the environment.
    pub fn from_env(base_url: Option<String>, api_key: Option<String>) -> Result<Self, GatewayError> {
        let base = base_url
            .or_else(|| std::env::var(ENV_API_BASE).ok())
            .filter(|s| !s.is_empty())
            .ok_or_else(|| GatewayError::Config(format!("no API base given and {ENV_API_BASE} is unset")))?;
        let mut cfg = Self::new(base);
        cfg.api_key = api_key.or_else(|| std::env::var(ENV_API_KEY).ok()).filter(|s| !s.is_empty());
        if let Ok(model) = std::env::var(ENV_MODEL) {
            if !model.is_empty() {
                cfg.model = model;
            }
        }
        Ok(cfg)
    }

    fn endpoint(&self) -> String {
        let base = self.base_url.trim_end_matches('/');
        if base.ends_with("/chat/completions") {
            base.to_string()
        } else {
            format!("{base}/chat/completions")
        }
    }
}

#[derive(Debug)]
pub struct RemoteBackend {
    config: RemoteConfig,
    client: reqwest::blocking::Client,
    limit: InFlightLimit,
}

enum Failure {
    Retry(String),
    Fatal(GatewayError),
}

fn wire_message(m: &ChatMessage) -> Value {
    let role = match m.role {
        Role::System => "system",
        Role::User => "user",
        Role::Assistant => "assistant",
        Role::Tool => "tool",
    };
    let mut v = json!({"role": role, "content": m.content});
    if !m.tool_calls.is_empty() {
        v["tool_calls"] = m
            .tool_calls
            .iter()
            .map(|c| json!({"id": c.id, "type": "function", "function": {"name": c.name, "arguments": c.arguments}}))
            .collect();
        if m.content.is_empty() {
            v["content"] = Value::Null;
        }
    }
    if let Some(id) = &m.tool_call_id {
        v["tool_call_id"] = json!(id);
    }
    v
}

pub(crate) fn request_body(model: &str, exchange: &ChatExchange) -> Value {
    let mut body = json!({
        "model": model,
        "messages": exchange.messages.iter().map(wire_message).collect::<Vec<_>>(),
        "temperature": exchange.params.temperature,
    });
    if !exchange.declared_tools.is_empty() {
        body["tools"] = exchange
            .declared_tools
            .iter()
            .map(|t| json!({"type": "function", "function": {"name": t.name, "description": t.description, "parameters": t.parameters}}))
            .collect();
        body["tool_choice"] = json!("auto");
    }
    body
}

/// Parses a chat-completions response body.
pub(crate) fn parse_response(raw: &str) -> Result<AssistantMessage, GatewayError> {
    let v: Value = serde_json::from_str(raw).map_err(|e| GatewayError::Parse(format!("response is not JSON: {e}")))?;
    let msg = v
        .pointer("/choices/0/message")
        .ok_or_else(|| GatewayError::Parse("response has no choices[0].message".into()))?;
    let content = msg.get("content").and_then(Value::as_str).unwrap_or("").to_string();
    let mut tool_calls = Vec::new();
    if let Some(calls) = msg.get("tool_calls").and_then(Value::as_array) {
        for (i, c) in calls.iter().enumerate() {
            let f = c.get("function").unwrap_or(c);
            let name = f
                .get("name")
                .and_then(Value::as_str)
                .ok_or_else(|| GatewayError::Parse(format!("tool call {i} has no function name")))?;
            let arguments = match f.get("arguments") {
                Some(Value::String(s)) => s.clone(),
                Some(Value::Null) | None => "{}".into(),
                Some(other) => other.to_string(),
            };
            let id = c.get("id").and_then(Value::as_str).map(String::from).unwrap_or_else(|| format!("call_{i}"));
            tool_calls.push(ToolCallRequest { id, name: name.to_string(), arguments });
        }
    }
    let usage = Usage {
        prompt_tokens: v.pointer("/usage/prompt_tokens").and_then(Value::as_u64).unwrap_or(0),
        completion_tokens: v.pointer("/usage/completion_tokens").and_then(Value::as_u64).unwrap_or(0),
    };
    Ok(AssistantMessage { content, tool_calls, usage })
}

impl RemoteBackend {
    pub fn new(config: RemoteConfig) -> Result<Self, GatewayError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(config.timeout_ms))
            .build()
            .map_err(|e| GatewayError::Config(e.to_string()))?;
        let limit = InFlightLimit::new(config.max_in_flight);
        Ok(Self { config, client, limit })
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.config
    }

    fn attempt(&self, body: &Value) -> Result<AssistantMessage, Failure> {
        let _permit = self.limit.acquire();
        let mut req = self.client.post(self.config.endpoint()).json(body);
        if let Some(key) = &self.config.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| Failure::Retry(e.to_string()))?;
        let status = resp.status();
        let text = resp.text().map_err(|e| Failure::Retry(e.to_string()))?;
        let code = status.as_u16();
        if status.is_server_error() || code == 429 || code == 408 {
            return Err(Failure::Retry(format!("status {status}")));
        }
        if !status.is_success() {
            return Err(Failure::Fatal(GatewayError::Config(format!("provider rejected request ({status}): {text}"))));
        }
        parse_response(&text).map_err(Failure::Fatal)
    }
}

impl ChatBackend for RemoteBackend {
    fn complete(&self, exchange: &ChatExchange) -> Result<AssistantMessage, GatewayError> {
        exchange.validate()?;
        let body = request_body(&self.config.model, exchange);
        let attempts = self.config.max_retries + 1;
        let mut last = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                let wait = self.config.backoff_ms.saturating_mul(1 << (attempt - 1).min(6));
                std::thread::sleep(Duration::from_millis(wait));
            }
            match self.attempt(&body) {
                Ok(msg) => return Ok(msg),
                Err(Failure::Fatal(e)) => return Err(e),
                Err(Failure::Retry(msg)) => {
                    tracing::warn!(attempt, error = %msg, "chat completion attempt failed");
                    last = msg;
                }
            }
        }
        Err(GatewayError::Transport { message: last, attempts })
    }

    fn name(&self) -> &str {
        "remote"
    }
}
