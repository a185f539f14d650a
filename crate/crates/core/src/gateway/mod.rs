//! Model-call abstraction: a chat exchange with declared tool schemas,
//! answered by text and/or tool-call requests.

mod heuristic;
mod mock;
mod remote;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use heuristic::{HeuristicAgent, HeuristicOptions};
pub use mock::{load_script, parse_script, render_script, save_script, PolicyBackend, RecordingBackend, Script, ScriptedMock};
pub use remote::{RemoteBackend, RemoteConfig, ENV_API_BASE, ENV_API_KEY, ENV_MODEL};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    System,
    User,
    Assistant,
    Tool,
}

/// A requested tool call. `arguments` is the raw JSON text as emitted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolCallRequest {
    pub id: String,
    pub name: String,
    pub arguments: String,
}

impl ToolCallRequest {
    pub fn new(id: impl Into<String>, name: impl Into<String>, args: &Value) -> Self {
        Self { id: id.into(), name: name.into(), arguments: args.to_string() }
    }

    pub fn parsed_arguments(&self) -> Result<Value, GatewayError> {
        if self.arguments.trim().is_empty() {
            return Ok(Value::Object(Default::default()));
        }
        match serde_json::from_str::<Value>(&self.arguments) {
            Ok(v @ Value::Object(_)) => Ok(v),
            Ok(Value::Null) => Ok(Value::Object(Default::default())),
            Ok(other) => Err(GatewayError::Parse(format!("arguments for {} must be an object, got {other}", self.name))),
            Err(e) => Err(GatewayError::Parse(format!("arguments for {} are not JSON: {e}", self.name))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    #[serde(default)]
    pub content: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tool_calls: Vec<ToolCallRequest>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_call_id: Option<String>,
}

impl ChatMessage {
    fn plain(role: Role, content: impl Into<String>) -> Self {
        Self { role, content: content.into(), tool_calls: Vec::new(), tool_call_id: None }
    }

    pub fn system(content: impl Into<String>) -> Self {
        Self::plain(Role::System, content)
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self::plain(Role::User, content)
    }

    pub fn tool(call_id: &str, content: impl Into<String>) -> Self {
        Self { tool_call_id: Some(call_id.to_string()), ..Self::plain(Role::Tool, content) }
    }

    pub fn assistant(msg: &AssistantMessage) -> Self {
        Self {
            role: Role::Assistant,
            content: msg.content.clone(),
            tool_calls: msg.tool_calls.clone(),
            tool_call_id: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolSchema {
    pub name: String,
    pub description: String,
    pub parameters: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatParams {
    pub temperature: f64,
    pub max_steps: usize,
    pub seed_tag: String,
}

impl Default for ChatParams {
    fn default() -> Self {
        Self { temperature: 0.0, max_steps: 8, seed_tag: String::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatExchange {
    pub messages: Vec<ChatMessage>,
    pub declared_tools: Vec<ToolSchema>,
    pub params: ChatParams,
}

impl ChatExchange {
    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.messages.is_empty() {
            return Err(GatewayError::Config("exchange has no messages".into()));
        }
        for m in &self.messages {
            for call in &m.tool_calls {
                if !self.declared_tools.iter().any(|t| t.name == call.name) {
                    return Err(GatewayError::Config(format!("tool call references undeclared tool {}", call.name)));
                }
            }
        }
        Ok(())
    }

    pub fn declares(&self, tool: &str) -> bool {
        self.declared_tools.iter().any(|t| t.name == tool)
    }

    pub fn system_text(&self) -> &str {
        self.messages.iter().find(|m| m.role == Role::System).map(|m| m.content.as_str()).unwrap_or("")
    }

    pub fn first_user_text(&self) -> &str {
        self.messages.iter().find(|m| m.role == Role::User).map(|m| m.content.as_str()).unwrap_or("")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

impl Usage {
    pub fn total(&self) -> u64 {
        self.prompt_tokens + self.completion_tokens
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AssistantMessage {
    #[serde(default)]
    pub content: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tool_calls: Vec<ToolCallRequest>,
    #[serde(default)]
    pub usage: Usage,
}

impl AssistantMessage {
    pub fn text(content: impl Into<String>) -> Self {
        Self { content: content.into(), ..Self::default() }
    }

    pub fn call(id: &str, name: &str, args: &Value) -> Self {
        Self { tool_calls: vec![ToolCallRequest::new(id, name, args)], ..Self::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GatewayError {
    /// Retriable failure that exhausted the retry budget.
    #[error("transport failure after {attempts} attempts: {message}")]
    Transport { message: String, attempts: u32 },
    #[error("no scripted response for exchange digest {0}")]
    ScriptMiss(String),
    #[error("gateway configuration error: {0}")]
    Config(String),
    #[error("malformed model output: {0}")]
    Parse(String),
}

impl GatewayError {
    /// Errors the episode cannot recover from by continuing.
    pub fn is_fatal(&self) -> bool {
        matches!(self, GatewayError::ScriptMiss(_) | GatewayError::Config(_))
    }
}

pub trait ChatBackend: Send + Sync {
    fn complete(&self, exchange: &ChatExchange) -> Result<AssistantMessage, GatewayError>;

    fn name(&self) -> &str {
        "backend"
    }
}

impl<T: ChatBackend + ?Sized> ChatBackend for &T {
    fn complete(&self, exchange: &ChatExchange) -> Result<AssistantMessage, GatewayError> {
        (**self).complete(exchange)
    }

    fn name(&self) -> &str {
        (**self).name()
    }
}

impl<T: ChatBackend + ?Sized> ChatBackend for Box<T> {
    fn complete(&self, exchange: &ChatExchange) -> Result<AssistantMessage, GatewayError> {
        (**self).complete(exchange)
    }

    fn name(&self) -> &str {
        (**self).name()
    }
}

fn normalize(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn normalize_args(raw: &str) -> String {
    match serde_json::from_str::<Value>(raw) {
        Ok(v) => v.to_string(),
        Err(_) => normalize(raw),
    }
}

/// Content digest keyed on normalized messages and declared tool ids.
pub fn exchange_digest(exchange: &ChatExchange) -> String {
    let mut h = Sha256::new();
    for m in &exchange.messages {
        h.update(serde_json::to_string(&m.role).expect("role serializes").as_bytes());
        h.update([0x1f]);
        h.update(normalize(&m.content).as_bytes());
        for c in &m.tool_calls {
            h.update([0x1f]);
            h.update(c.name.as_bytes());
            h.update([0x1f]);
            h.update(normalize_args(&c.arguments).as_bytes());
        }
        h.update([0x1e]);
    }
    let mut tools: Vec<&str> = exchange.declared_tools.iter().map(|t| t.name.as_str()).collect();
    tools.sort_unstable();
    h.update(tools.join(",").as_bytes());
    hex::encode(h.finalize())
}

/// Rough token estimate for backends that do not report usage.
pub fn estimate_tokens(text: &str) -> u64 {
    (text.len() as u64).div_ceil(4)
}

pub fn estimate_usage(exchange: &ChatExchange, reply: &AssistantMessage) -> Usage {
    let prompt: u64 = exchange.messages.iter().map(|m| estimate_tokens(&m.content) + 4).sum();
    let completion = estimate_tokens(&reply.content)
        + reply.tool_calls.iter().map(|c| estimate_tokens(&c.arguments) + estimate_tokens(&c.name)).sum::<u64>();
    Usage { prompt_tokens: prompt, completion_tokens: completion }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn exchange(user: &str) -> ChatExchange {
        ChatExchange {
            messages: vec![ChatMessage::system("sys"), ChatMessage::user(user)],
            declared_tools: vec![
                ToolSchema { name: "naive".into(), description: String::new(), parameters: json!({}) },
                ToolSchema { name: "drift".into(), description: String::new(), parameters: json!({}) },
            ],
            params: ChatParams::default(),
        }
    }

    #[test]
    fn digest_normalizes_whitespace_and_tool_order() {
        let a = exchange("forecast  the\nseries");
        let mut b = exchange("forecast the series");
        b.declared_tools.reverse();
        assert_eq!(exchange_digest(&a), exchange_digest(&b));
        assert_ne!(exchange_digest(&a), exchange_digest(&exchange("forecast the series now")));
    }

    #[test]
    fn argument_parsing() {
        let ok = ToolCallRequest { id: "1".into(), name: "naive".into(), arguments: r#"{"horizon": 2}"#.into() };
        assert_eq!(ok.parsed_arguments().unwrap(), json!({"horizon": 2}));
        let bad = ToolCallRequest { arguments: "{horizon: 2".into(), ..ok.clone() };
        assert!(matches!(bad.parsed_arguments(), Err(GatewayError::Parse(_))));
        let arr = ToolCallRequest { arguments: "[1]".into(), ..ok };
        assert!(arr.parsed_arguments().is_err());
    }

    #[test]
    fn undeclared_tool_calls_are_rejected() {
        let mut ex = exchange("x");
        ex.messages.push(ChatMessage::assistant(&AssistantMessage::call("c1", "holt", &json!({}))));
        assert!(ex.validate().is_err());
        assert!(ChatExchange { messages: vec![], ..exchange("x") }.validate().is_err());
    }
}
