//! Generic HTTP tool adapter.
//!
//! Request: `POST {tool, args, inputs, series, horizon}`. The response must
//! be `{kind, payload}` in the artifact wire format; a bare
//! `{forecast: [...]}` body is accepted as a series.

use std::time::Duration;

use serde_json::{json, Value};

use super::{ToolFailure, ToolOutput};
use crate::limit::InFlightLimit;
use crate::model::{IndexTransform, Payload, ToolArtifact, ORIGINAL_INPUT};

#[derive(Debug, Clone, PartialEq)]
pub struct RemoteToolConfig {
    pub url: String,
    pub timeout_ms: u64,
    pub retries: u32,
    pub backoff_ms: u64,
    pub max_in_flight: usize,
    pub api_key: Option<String>,
}

impl RemoteToolConfig {
    pub fn new(url: impl Into<String>) -> Self {
        Self { url: url.into(), timeout_ms: 10_000, retries: 2, backoff_ms: 100, max_in_flight: 4, api_key: None }
    }
}

#[derive(Debug)]
pub struct RemoteTool {
    config: RemoteToolConfig,
    client: reqwest::blocking::Client,
    limit: InFlightLimit,
}

enum Attempt {
    Retry(String),
    Fatal(ToolFailure),
}

impl RemoteTool {
    pub fn new(config: RemoteToolConfig) -> Result<Self, ToolFailure> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(config.timeout_ms))
            .build()
            .map_err(|e| ToolFailure::new("remote_config", e.to_string()))?;
        let limit = InFlightLimit::new(config.max_in_flight);
        Ok(Self { config, client, limit })
    }

    pub fn config(&self) -> &RemoteToolConfig {
        &self.config
    }

    fn body(tool: &str, args: &Value, inputs: &[&ToolArtifact], series: &[f64], horizon: usize) -> Value {
        let mut args = args.clone();
        if let Value::Object(m) = &mut args {
            m.remove("inputs");
        }
        let inputs: Vec<Value> = if inputs.is_empty() {
            vec![json!({"artifact_id": ORIGINAL_INPUT, "kind": "series", "payload": {"values": series}})]
        } else {
            inputs
                .iter()
                .map(|a| {
                    let mut v = serde_json::to_value(&a.payload).expect("payload serializes");
                    v["artifact_id"] = json!(a.artifact_id);
                    v
                })
                .collect()
        };
        json!({"tool": tool, "args": args, "inputs": inputs, "series": series, "horizon": horizon})
    }

    fn parse(raw: &str) -> Result<Payload, ToolFailure> {
        let v: Value = serde_json::from_str(raw).map_err(|e| ToolFailure::new("remote_bad_response", e.to_string()))?;
        if let Some(f) = v.get("forecast") {
            let values: Vec<f64> = serde_json::from_value(f.clone())
                .map_err(|e| ToolFailure::new("remote_bad_response", e.to_string()))?;
            return Ok(Payload::Series { values });
        }
        let payload: Payload =
            serde_json::from_value(v).map_err(|e| ToolFailure::new("remote_bad_response", e.to_string()))?;
        payload.check().map_err(|m| ToolFailure::new("remote_bad_response", m))?;
        Ok(payload)
    }

    fn attempt(&self, body: &Value) -> Result<Payload, Attempt> {
        let _permit = self.limit.acquire();
        let mut req = self.client.post(&self.config.url).json(body);
        if let Some(key) = &self.config.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| Attempt::Retry(e.to_string()))?;
        let status = resp.status();
        let text = resp.text().map_err(|e| Attempt::Retry(e.to_string()))?;
        if status.is_server_error() || status.as_u16() == 429 {
            return Err(Attempt::Retry(format!("status {status}")));
        }
        if !status.is_success() {
            return Err(Attempt::Fatal(ToolFailure::new("remote_rejected", format!("status {status}: {text}"))));
        }
        Self::parse(&text).map_err(Attempt::Fatal)
    }

    pub(crate) fn call(
        &self,
        tool: &str,
        args: &Value,
        inputs: &[&ToolArtifact],
        series: &[f64],
        horizon: usize,
    ) -> ToolOutput {
        let body = Self::body(tool, args, inputs, series, horizon);
        let mut last = String::new();
        for attempt in 0..=self.config.retries {
            if attempt > 0 {
                std::thread::sleep(Duration::from_millis(self.config.backoff_ms << (attempt - 1).min(6)));
            }
            match self.attempt(&body) {
                Ok(payload) => {
                    let transform = match &payload {
                        Payload::Series { values } => {
                            IndexTransform::Forecast { origin: series.len() as i64, horizon: values.len() }
                        }
                        _ => IndexTransform::NotApplicable,
                    };
                    return Ok((payload, transform));
                }
                Err(Attempt::Fatal(f)) => return Err(f),
                Err(Attempt::Retry(msg)) => {
                    tracing::warn!(tool, attempt, error = %msg, "remote tool attempt failed");
                    last = msg;
                }
            }
        }
        Err(ToolFailure::new("remote_unavailable", format!("{} attempts failed: {last}", self.config.retries + 1)))
    }
}
