//! Trace replay against the toolkit, and trace linting.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::model::{Answer, EvaluatorCapability, TaskInstance, ToolArtifact};
use crate::orchestrator::{enforce_exploration_contract, ContractVerdict, Trace, TraceKind, ENGINE_VERSION, MAIN_BRANCH, TRACE_FORMAT};
use crate::registry::Mode;
use crate::toolkit::{ArtifactStore, InvocationContext, ToolInvocation, Toolkit};

#[derive(Debug, Error, PartialEq)]
pub enum ReplayError {
    #[error("trace was written by {trace} ({format}); this engine is {engine} ({expected})")]
    Version { trace: String, format: String, engine: String, expected: String },
    #[error("trace header instance is unusable: {0}")]
    Instance(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DivergenceKind {
    ArtifactMismatch,
    UnknownTool,
    OrphanResult,
    MissingResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Divergence {
    /// 1-based line in the trace file (the header is line 1).
    pub line: usize,
    pub ts: u64,
    pub branch: String,
    pub kind: DivergenceKind,
    pub tool: String,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ReplayReport {
    pub events: usize,
    pub replayed: usize,
    /// Evaluator results accepted as recorded because no ground truth was
    /// supplied.
    pub unverified: usize,
    pub engine_handled: usize,
    pub divergences: Vec<Divergence>,
}

impl ReplayReport {
    pub fn clean(&self) -> bool {
        self.divergences.is_empty()
    }
}

fn store_prefix(mode: Mode, branch: &str) -> String {
    match (mode, branch) {
        (Mode::Exploration, MAIN_BRANCH) => "m".into(),
        (Mode::Inference, MAIN_BRANCH) => "i".into(),
        (_, b) => b.into(),
    }
}

fn canonical(v: &Value) -> String {
    serde_json::to_string(v).expect("json values serialize")
}

/// Re-executes every recorded tool call and compares the artifacts with the
/// recorded results. Gateway turns are taken from the trace as-is.
/// `truth` supplies ground truth for evaluator calls; without it those
/// results are counted as unverified.
pub fn replay(trace: &Trace, toolkit: &Toolkit, truth: Option<&TaskInstance>) -> Result<ReplayReport, ReplayError> {
    let h = &trace.header;
    if h.engine_version != ENGINE_VERSION || h.format != TRACE_FORMAT {
        return Err(ReplayError::Version {
            trace: h.engine_version.clone(),
            format: h.format.clone(),
            engine: ENGINE_VERSION.into(),
            expected: TRACE_FORMAT.into(),
        });
    }
    let view = TaskInstance::from_record(h.instance.clone()).map_err(|e| ReplayError::Instance(e.to_string()))?;
    let instance = truth.filter(|t| t.id == view.id && t.has_ground_truth()).unwrap_or(&view);
    let cap = EvaluatorCapability::exploration();
    let registry = toolkit.registry();
    let mut stores: BTreeMap<String, ArtifactStore> = BTreeMap::new();
    let mut pending: BTreeMap<(String, String), (String, Value)> = BTreeMap::new();
    let mut report = ReplayReport { events: trace.events.len(), ..ReplayReport::default() };

    for (i, e) in trace.events.iter().enumerate() {
        let line = i + 2;
        let call_id = e.payload.get("call_id").and_then(Value::as_str).unwrap_or("").to_string();
        let tool = e.payload.get("tool").and_then(Value::as_str).unwrap_or("").to_string();
        let diverge = |kind, detail: String| Divergence { line, ts: e.ts, branch: e.branch.clone(), kind, tool: tool.clone(), detail };
        match e.kind {
            TraceKind::ToolCall => {
                let args = e.payload.get("args").cloned().unwrap_or(Value::Null);
                pending.insert((e.branch.clone(), call_id), (tool.clone(), args));
            }
            TraceKind::ToolResult => {
                let Some((called, args)) = pending.remove(&(e.branch.clone(), call_id.clone())) else {
                    report.divergences.push(diverge(DivergenceKind::OrphanResult, format!("no tool_call with id {call_id}")));
                    continue;
                };
                let Some(recorded) = e.payload.get("artifact") else {
                    report.engine_handled += 1;
                    continue;
                };
                let store = stores
                    .entry(e.branch.clone())
                    .or_insert_with(|| ArtifactStore::new(&view.series).with_prefix(&store_prefix(h.mode, &e.branch)));
                let keep_recorded = |store: &mut ArtifactStore| {
                    if let Ok(a) = serde_json::from_value::<ToolArtifact>(recorded.clone()) {
                        store.insert(a.payload, a.provenance);
                    }
                };
                let Some(desc) = registry.get(&called) else {
                    report.divergences.push(diverge(DivergenceKind::UnknownTool, format!("tool {called} is not registered")));
                    keep_recorded(store);
                    continue;
                };
                let evaluator = !desc.category.is_task_facing() && desc.category == crate::registry::ToolCategory::ExplorationOnly;
                if evaluator && !instance.has_ground_truth() {
                    report.unverified += 1;
                    keep_recorded(store);
                    continue;
                }
                let ctx = match h.mode {
                    Mode::Exploration if e.branch == MAIN_BRANCH => InvocationContext::exploration(instance, Some(cap)),
                    Mode::Exploration => InvocationContext::exploration(&view, None),
                    Mode::Inference => InvocationContext::inference(&view),
                };
                report.replayed += 1;
                match toolkit.invoke(&ToolInvocation::new(&called, args), &ctx, store) {
                    Ok(art) => {
                        let fresh = canonical(&serde_json::to_value(&art).expect("artifact serializes"));
                        let old = canonical(recorded);
                        if fresh != old {
                            report.divergences.push(diverge(DivergenceKind::ArtifactMismatch, format!("artifact {} differs", art.artifact_id)));
                        }
                    }
                    Err(err) => {
                        report.divergences.push(diverge(DivergenceKind::ArtifactMismatch, format!("replay refused: {err}")));
                        keep_recorded(store);
                    }
                }
            }
            _ => {}
        }
    }
    for ((branch, call_id), (tool, _)) in pending {
        report.divergences.push(Divergence {
            line: 0,
            ts: 0,
            branch,
            kind: DivergenceKind::MissingResult,
            tool,
            detail: format!("tool_call {call_id} has no result"),
        });
    }
    Ok(report)
}

/// Byte patterns that would reveal a ground-truth payload.
pub fn leak_needles(truth: &Answer) -> Vec<String> {
    let mut out = vec!["\"ground_truth\":".to_string()];
    if let Answer::Numeric(v) = truth {
        let parts: Vec<String> = v.iter().map(|x| serde_json::to_string(x).expect("finite")).collect();
        out.push(format!("[{}]", parts.join(",")));
        for w in parts.windows(3) {
            out.push(w.join(","));
        }
    }
    out.sort();
    out.dedup();
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeakFinding {
    pub line: usize,
    pub needle: String,
}

/// Every line of `text` containing one of `needles`.
pub fn scan_for_leaks(text: &str, needles: &[String]) -> Vec<LeakFinding> {
    let mut out = Vec::new();
    for (i, l) in text.lines().enumerate() {
        for n in needles {
            if l.contains(n.as_str()) {
                out.push(LeakFinding { line: i + 1, needle: n.clone() });
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LintReport {
    pub mode: Mode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verdict: Option<ContractVerdict>,
    pub leaks: Vec<LeakFinding>,
    /// False when no ground truth was available for the leak scan; only the
    /// `ground_truth` key is checked then.
    pub truth_checked: bool,
}

impl LintReport {
    pub fn clean(&self) -> bool {
        self.leaks.is_empty() && self.verdict.as_ref().is_none_or(ContractVerdict::pass)
    }
}

/// Contract verdict for exploration traces plus a ground-truth leak scan
/// over the raw trace text.
pub fn lint(raw: &str, trace: &Trace, truth: Option<&TaskInstance>) -> LintReport {
    let cap = EvaluatorCapability::offline_scorer();
    let gt = truth.filter(|t| t.id == trace.header.instance.id).and_then(|t| t.ground_truth(&cap).ok());
    let needles = match gt {
        Some(a) => leak_needles(a),
        None => vec!["\"ground_truth\":".to_string()],
    };
    LintReport {
        mode: trace.header.mode,
        verdict: (trace.header.mode == Mode::Exploration).then(|| enforce_exploration_contract(trace)),
        leaks: scan_for_leaks(raw, &needles),
        truth_checked: gt.is_some(),
    }
}
