//! Deterministic backends: digest-keyed replay scripts, a recorder that
//! produces them, and a closure-backed policy.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{estimate_usage, exchange_digest, AssistantMessage, ChatBackend, ChatExchange, GatewayError, ToolCallRequest};

pub type Script = BTreeMap<String, AssistantMessage>;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct WireCall {
    #[serde(default)]
    id: Option<String>,
    name: String,
    #[serde(default)]
    arguments: Value,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum WireReply {
    Text(String),
    Message {
        #[serde(default)]
        content: String,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        tool_calls: Vec<WireCall>,
    },
}

impl WireReply {
    fn into_message(self) -> AssistantMessage {
        match self {
            WireReply::Text(t) => AssistantMessage::text(t),
            WireReply::Message { content, tool_calls } => AssistantMessage {
                content,
                tool_calls: tool_calls
                    .into_iter()
                    .enumerate()
                    .map(|(i, c)| ToolCallRequest {
                        id: c.id.unwrap_or_else(|| format!("call_{i}")),
                        name: c.name,
                        arguments: match c.arguments {
                            Value::String(s) => s,
                            Value::Null => "{}".into(),
                            v => v.to_string(),
                        },
                    })
                    .collect(),
                ..AssistantMessage::default()
            },
        }
    }

    fn from_message(m: &AssistantMessage) -> Self {
        if m.tool_calls.is_empty() {
            return WireReply::Text(m.content.clone());
        }
        WireReply::Message {
            content: m.content.clone(),
            tool_calls: m
                .tool_calls
                .iter()
                .map(|c| WireCall {
                    id: Some(c.id.clone()),
                    name: c.name.clone(),
                    arguments: match serde_json::from_str::<Value>(&c.arguments) {
                        Ok(v @ Value::Object(_)) => v,
                        _ => Value::String(c.arguments.clone()),
                    },
                })
                .collect(),
        }
    }
}

pub fn load_script(path: &Path) -> Result<Script, GatewayError> {
    let raw = fs::read_to_string(path)
        .map_err(|e| GatewayError::Config(format!("cannot read mock script {}: {e}", path.display())))?;
    parse_script(&raw).map_err(|e| GatewayError::Config(format!("mock script {}: {e}", path.display())))
}

pub fn parse_script(raw: &str) -> Result<Script, serde_json::Error> {
    let wire: BTreeMap<String, WireReply> = serde_json::from_str(raw)?;
    Ok(wire.into_iter().map(|(k, v)| (k, v.into_message())).collect())
}

pub fn render_script(script: &Script) -> String {
    let wire: BTreeMap<&String, WireReply> = script.iter().map(|(k, v)| (k, WireReply::from_message(v))).collect();
    serde_json::to_string_pretty(&wire).expect("script serializes") + "\n"
}

pub fn save_script(script: &Script, path: &Path) -> Result<(), GatewayError> {
    fs::write(path, render_script(script))
        .map_err(|e| GatewayError::Config(format!("cannot write mock script {}: {e}", path.display())))
}

/// Replays responses keyed by [`exchange_digest`]; misses fail loudly.
#[derive(Debug, Clone, Default)]
pub struct ScriptedMock {
    script: Script,
}

impl ScriptedMock {
    pub fn new(script: Script) -> Self {
        Self { script }
    }

    pub fn load(path: &Path) -> Result<Self, GatewayError> {
        Ok(Self::new(load_script(path)?))
    }

    pub fn len(&self) -> usize {
        self.script.len()
    }

    pub fn is_empty(&self) -> bool {
        self.script.is_empty()
    }
}

impl ChatBackend for ScriptedMock {
    fn complete(&self, exchange: &ChatExchange) -> Result<AssistantMessage, GatewayError> {
        exchange.validate()?;
        let digest = exchange_digest(exchange);
        let mut reply = self.script.get(&digest).cloned().ok_or(GatewayError::ScriptMiss(digest))?;
        reply.usage = estimate_usage(exchange, &reply);
        Ok(reply)
    }

    fn name(&self) -> &str {
        "scripted_mock"
    }
}

/// Wraps a backend and keeps every reply under its exchange digest.
pub struct RecordingBackend<B> {
    inner: B,
    recorded: Mutex<Script>,
}

impl<B: ChatBackend> RecordingBackend<B> {
    pub fn new(inner: B) -> Self {
        Self { inner, recorded: Mutex::new(Script::new()) }
    }

    pub fn script(&self) -> Script {
        self.recorded.lock().expect("recording lock").clone()
    }

    pub fn save(&self, path: &Path) -> Result<(), GatewayError> {
        save_script(&self.script(), path)
    }
}

impl<B: ChatBackend> ChatBackend for RecordingBackend<B> {
    fn complete(&self, exchange: &ChatExchange) -> Result<AssistantMessage, GatewayError> {
        let reply = self.inner.complete(exchange)?;
        let mut stored = reply.clone();
        stored.usage = Default::default();
        self.recorded.lock().expect("recording lock").insert(exchange_digest(exchange), stored);
        Ok(reply)
    }

    fn name(&self) -> &str {
        self.inner.name()
    }
}

type Policy = dyn Fn(&ChatExchange) -> Result<AssistantMessage, GatewayError> + Send + Sync;

/// Backend answering through a closure.
pub struct PolicyBackend {
    policy: Box<Policy>,
}

impl PolicyBackend {
    pub fn new(policy: impl Fn(&ChatExchange) -> Result<AssistantMessage, GatewayError> + Send + Sync + 'static) -> Self {
        Self { policy: Box::new(policy) }
    }
}

impl ChatBackend for PolicyBackend {
    fn complete(&self, exchange: &ChatExchange) -> Result<AssistantMessage, GatewayError> {
        exchange.validate()?;
        let mut reply = (self.policy)(exchange)?;
        if reply.usage.total() == 0 {
            reply.usage = estimate_usage(exchange, &reply);
        }
        Ok(reply)
    }

    fn name(&self) -> &str {
        "policy"
    }
}
