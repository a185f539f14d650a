//! JSONL episode traces: one header line, then one event per line.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::model::InstanceRecord;
use crate::registry::Mode;

pub const TRACE_FORMAT: &str = "eel-trace/1";
pub const ENGINE_VERSION: &str = concat!("eel-core/", env!("CARGO_PKG_VERSION"));
pub const MAIN_BRANCH: &str = "main";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub format: String,
    pub engine_version: String,
    pub config_digest: String,
    pub mode: Mode,
    pub episode: String,
    /// Instance as the agent saw it; never carries ground truth.
    pub instance: InstanceRecord,
    #[serde(default)]
    pub prior_exists: bool,
    #[serde(default)]
    pub require_prior_and_alternative: bool,
    #[serde(default = "two")]
    pub min_valid_candidates: usize,
}

fn two() -> usize {
    2
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceKind {
    GatewayRequest,
    GatewayResponse,
    ToolCall,
    ToolResult,
    Verdict,
    Outcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub ts: u64,
    pub episode: String,
    pub branch: String,
    pub kind: TraceKind,
    pub payload: Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub header: TraceHeader,
    pub events: Vec<TraceEvent>,
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("trace is empty")]
    Empty,
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

impl Trace {
    pub fn new(header: TraceHeader) -> Self {
        Self { header, events: Vec::new() }
    }

    pub fn push(&mut self, branch: &str, kind: TraceKind, payload: Value) {
        let ts = self.events.len() as u64 + 1;
        self.events.push(TraceEvent { ts, episode: self.header.episode.clone(), branch: branch.to_string(), kind, payload });
    }

    pub fn to_jsonl(&self) -> String {
        let mut s = serde_json::to_string(&self.header).expect("header serializes");
        s.push('\n');
        for e in &self.events {
            s.push_str(&serde_json::to_string(e).expect("event serializes"));
            s.push('\n');
        }
        s
    }

    pub fn parse(raw: &str) -> Result<Self, TraceError> {
        let mut lines = raw.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, first) = lines.next().ok_or(TraceError::Empty)?;
        let header: TraceHeader =
            serde_json::from_str(first).map_err(|e| TraceError::Parse { line: 1, message: e.to_string() })?;
        let mut events = Vec::new();
        for (i, l) in lines {
            events.push(
                serde_json::from_str(l).map_err(|e| TraceError::Parse { line: i + 1, message: e.to_string() })?,
            );
        }
        Ok(Self { header, events })
    }

    pub fn read(path: &Path) -> Result<Self, TraceError> {
        let raw = std::fs::read_to_string(path)
            .map_err(|source| TraceError::Io { path: path.display().to_string(), source })?;
        Self::parse(&raw)
    }

    pub fn write(&self, path: &Path) -> Result<(), TraceError> {
        let io = |source| TraceError::Io { path: path.display().to_string(), source };
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(io)?;
        }
        std::fs::write(path, self.to_jsonl()).map_err(|source| TraceError::Io { path: path.display().to_string(), source })
    }

    pub fn of_kind(&self, kind: TraceKind) -> impl Iterator<Item = &TraceEvent> {
        self.events.iter().filter(move |e| e.kind == kind)
    }
}
