//! Built-in tool library behind one invocation contract.
//!
//! Every call yields a [`ToolArtifact`] with provenance. Schema violations
//! and tool failures come back in-band as error artifacts so the agent loop
//! can observe and recover; running an exploration-only or orchestration
//! tool in inference mode is a hard [`CapabilityError`].

pub mod analysis;
pub mod forecast;
pub mod remote;
pub mod text;

use std::collections::BTreeMap;
use std::sync::Arc;

use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::metrics::MetricReport;
use crate::model::{
    Answer, CandidateReport, EvaluatorCapability, Event, IndexTransform, Payload, Provenance,
    TaskInstance, ToolArtifact, ORIGINAL_INPUT,
};
use crate::registry::{
    ArgKind, ArgSpec, Mode, Modality, RegistryError, ToolCategory, ToolDescriptor, ToolRegistry,
};

pub use remote::{RemoteTool, RemoteToolConfig};

pub const EVALUATE: &str = "evaluate_against_gt";
pub const EVALUATE_BATCH: &str = "evaluate_batch_against_gt";
pub const SPAWN: &str = "spawn_subagent";

/// Anomaly z-score cut.
pub const ANOMALY_Z: f64 = 3.0;

/// In-band failure of a tool; rendered as an error artifact.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToolFailure {
    pub code: String,
    pub message: String,
}

impl ToolFailure {
    pub fn new(code: &str, message: impl Into<String>) -> Self {
        Self { code: code.to_string(), message: message.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("capability error on {tool_id}: {reason}")]
pub struct CapabilityError {
    pub tool_id: String,
    pub reason: String,
}

/// Which instance a call runs against and with what authority.
#[derive(Debug, Clone, Copy)]
pub struct InvocationContext<'a> {
    pub instance: &'a TaskInstance,
    pub mode: Mode,
    pub evaluator: Option<EvaluatorCapability>,
}

impl<'a> InvocationContext<'a> {
    pub fn exploration(instance: &'a TaskInstance, evaluator: Option<EvaluatorCapability>) -> Self {
        Self { instance, mode: Mode::Exploration, evaluator }
    }

    pub fn inference(instance: &'a TaskInstance) -> Self {
        Self { instance, mode: Mode::Inference, evaluator: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToolInvocation {
    pub tool_id: String,
    pub args: Value,
    pub inputs: Vec<String>,
}

impl ToolInvocation {
    /// Reads input artifact refs from the `inputs` argument.
    pub fn new(tool_id: impl Into<String>, args: Value) -> Self {
        let inputs = match args.get("inputs") {
            Some(Value::String(s)) => vec![s.clone()],
            Some(Value::Array(items)) => items.iter().filter_map(|v| v.as_str().map(String::from)).collect(),
            _ => Vec::new(),
        };
        Self { tool_id: tool_id.into(), args, inputs }
    }
}

pub fn args_digest(tool_id: &str, args: &Value) -> String {
    let mut h = Sha256::new();
    h.update(tool_id.as_bytes());
    h.update([0]);
    h.update(serde_json::to_string(args).expect("json values serialize").as_bytes());
    hex::encode(&h.finalize()[..8])
}

/// Artifacts produced within one branch, rooted at the original input.
#[derive(Debug, Clone, PartialEq)]
pub struct ArtifactStore {
    prefix: String,
    artifacts: BTreeMap<String, ToolArtifact>,
    order: Vec<String>,
}

impl ArtifactStore {
    pub fn new(series: &[f64]) -> Self {
        let root = ToolArtifact {
            artifact_id: ORIGINAL_INPUT.into(),
            payload: Payload::Series { values: series.to_vec() },
            provenance: Provenance {
                tool_id: "input".into(),
                args_digest: String::new(),
                parents: Vec::new(),
                transform: IndexTransform::Identity,
            },
        };
        Self {
            prefix: String::new(),
            artifacts: BTreeMap::from([(ORIGINAL_INPUT.to_string(), root)]),
            order: vec![ORIGINAL_INPUT.into()],
        }
    }

    /// Artifact ids become `<prefix>.a<n>`.
    pub fn with_prefix(mut self, prefix: &str) -> Self {
        self.prefix = prefix.to_string();
        self
    }

    pub fn get(&self, id: &str) -> Option<&ToolArtifact> {
        self.artifacts.get(id)
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &ToolArtifact> {
        self.order.iter().map(|id| &self.artifacts[id])
    }

    fn next_id(&self) -> String {
        let n = self.order.len();
        if self.prefix.is_empty() {
            format!("a{n}")
        } else {
            format!("{}.a{n}", self.prefix)
        }
    }

    pub fn insert(&mut self, payload: Payload, provenance: Provenance) -> ToolArtifact {
        let art = ToolArtifact { artifact_id: self.next_id(), payload, provenance };
        self.order.push(art.artifact_id.clone());
        self.artifacts.insert(art.artifact_id.clone(), art.clone());
        art
    }

    /// Maps coordinate `i` of artifact `id` onto the original series axis
    /// by composing transforms along the first-parent chain.
    pub fn to_original(&self, id: &str, i: i64) -> Option<i64> {
        let mut id = id;
        let mut i = i;
        for _ in 0..=self.order.len() {
            if id == ORIGINAL_INPUT {
                return Some(i);
            }
            let art = self.artifacts.get(id)?;
            i = art.provenance.transform.map(i)?;
            id = art.provenance.parents.first()?;
        }
        None
    }
}

struct Call<'c> {
    ctx: &'c InvocationContext<'c>,
    args: &'c Value,
    inputs: Vec<&'c ToolArtifact>,
    store: &'c ArtifactStore,
}

type ToolOutput = Result<(Payload, IndexTransform), ToolFailure>;

impl Call<'_> {
    fn series(&self) -> Result<&[f64], ToolFailure> {
        match self.inputs.first() {
            None => Ok(&self.ctx.instance.series),
            Some(a) => a.series().ok_or_else(|| {
                ToolFailure::new("bad_input", format!("input {} is not a series artifact", a.artifact_id))
            }),
        }
    }

    fn usize_arg(&self, name: &str) -> Result<Option<usize>, ToolFailure> {
        match self.args.get(name) {
            None | Some(Value::Null) => Ok(None),
            Some(v) => v
                .as_u64()
                .map(|n| Some(n as usize))
                .ok_or_else(|| ToolFailure::new("bad_parameter", format!("{name} must be a non-negative integer"))),
        }
    }

    fn f64_arg(&self, name: &str, default: f64) -> f64 {
        self.args.get(name).and_then(Value::as_f64).unwrap_or(default)
    }

    fn horizon(&self) -> Result<usize, ToolFailure> {
        Ok(self.usize_arg("horizon")?.unwrap_or(self.ctx.instance.horizon))
    }

    fn artifact_series(&self, id: &str) -> Result<&[f64], ToolFailure> {
        self.store
            .get(id)
            .ok_or_else(|| ToolFailure::new("unknown_input", format!("no artifact {id}")))?
            .series()
            .ok_or_else(|| ToolFailure::new("bad_input", format!("artifact {id} is not a series")))
    }
}

fn forecast_out(values: Vec<f64>, origin: usize) -> ToolOutput {
    let horizon = values.len();
    Ok((Payload::Series { values }, IndexTransform::Forecast { origin: origin as i64, horizon }))
}

fn detected_period(series: &[f64]) -> usize {
    analysis::dominant_period(series).filter(|p| p.significant).map(|p| p.period).unwrap_or(1)
}

fn run_builtin(tool: &str, call: &Call) -> ToolOutput {
    use analysis as a;
    let na = IndexTransform::NotApplicable;
    match tool {
        "naive" => {
            let s = call.series()?;
            forecast_out(forecast::naive(s, call.horizon()?)?, s.len())
        }
        "drift" => {
            let s = call.series()?;
            forecast_out(forecast::drift(s, call.horizon()?)?, s.len())
        }
        "seasonal_naive" => {
            let s = call.series()?;
            let m = call.usize_arg("m")?.unwrap_or_else(|| detected_period(s));
            forecast_out(forecast::seasonal_naive(s, m, call.horizon()?)?, s.len())
        }
        "ses" => {
            let s = call.series()?;
            forecast_out(forecast::ses(s, call.f64_arg("alpha", 0.3), call.horizon()?)?, s.len())
        }
        "holt" => {
            let s = call.series()?;
            let out = forecast::holt(s, call.f64_arg("alpha", 0.3), call.f64_arg("beta", 0.1), call.horizon()?)?;
            forecast_out(out, s.len())
        }
        "moving_average" => {
            let s = call.series()?;
            let w = call.usize_arg("window")?.unwrap_or(3.min(s.len()));
            forecast_out(forecast::moving_average(s, w, call.horizon()?)?, s.len())
        }
        "basic_stats" => {
            let st = a::basic_stats(call.series()?)?;
            Ok((Payload::Scalar { value: st.mean, fields: st.fields() }, na))
        }
        "detect_trend" => {
            let t = a::detect_trend(call.series()?)?;
            let fields = BTreeMap::from([("slope".into(), t.slope), ("score".into(), t.score)]);
            Ok((Payload::Label { label: t.label.into(), fields }, na))
        }
        "detect_anomaly" => {
            let s = call.series()?;
            let z = call.f64_arg("threshold", ANOMALY_Z);
            let events = a::detect_anomalies(s, z)
                .into_iter()
                .map(|(i, score)| Event {
                    label: "anomaly".into(),
                    start: Some(i),
                    end: Some(i + 1),
                    fields: BTreeMap::from([("value".into(), s[i]), ("z".into(), score)]),
                    ..Event::default()
                })
                .collect();
            Ok((Payload::EventList { events }, IndexTransform::Identity))
        }
        "autocorrelation" => {
            let s = call.series()?;
            let lag = call.usize_arg("lag")?.unwrap_or(1);
            let r = a::lagged_correlation(s, lag)?;
            let mut fields = BTreeMap::from([("lag".into(), lag as f64)]);
            if let Some(p) = a::dominant_period(s) {
                fields.insert("dominant_period".into(), p.period as f64);
                fields.insert("period_strength".into(), p.strength);
                fields.insert("period_significant".into(), if p.significant { 1.0 } else { 0.0 });
            }
            Ok((Payload::Scalar { value: r, fields }, na))
        }
        "stationarity_check" => {
            let st = a::stationarity_check(call.series()?)?;
            let label = if st.stationary { "stationary" } else { "non_stationary" };
            let fields = BTreeMap::from([("acf1".into(), st.acf1), ("mean_shift".into(), st.mean_shift)]);
            Ok((Payload::Label { label: label.into(), fields }, na))
        }
        "segment" => {
            let s = call.series()?;
            let w = call.usize_arg("window")?.unwrap_or(0);
            let events = a::segment(s, w)?
                .into_iter()
                .map(|seg| Event {
                    label: "window".into(),
                    start: Some(seg.start),
                    end: Some(seg.end),
                    fields: BTreeMap::from([("mean".into(), seg.mean)]),
                    flags: BTreeMap::from([("partial".into(), seg.partial)]),
                    ..Event::default()
                })
                .collect();
            Ok((Payload::EventList { events }, IndexTransform::Identity))
        }
        "window_slice" => {
            let s = call.series()?;
            let (start, end) = a::resolve_range(call.args.get("range").unwrap_or(&Value::Null), s.len())?;
            Ok((
                Payload::Series { values: s[start..end].to_vec() },
                IndexTransform::Window { start: start as i64, len: end - start },
            ))
        }
        "window_stats" => window_stats(call),
        "value_at" => value_at(call),
        "keyword_extract" => {
            let k = call.usize_arg("k")?.unwrap_or(5);
            let events = text::keyword_extract(&call.ctx.instance.text, k)
                .into_iter()
                .map(|(term, n)| Event {
                    label: term,
                    fields: BTreeMap::from([("count".into(), n as f64)]),
                    ..Event::default()
                })
                .collect();
            Ok((Payload::EventList { events }, na))
        }
        "sentiment_lexicon" => {
            let body = match call.args.get("text").and_then(Value::as_str) {
                Some(t) => t.to_string(),
                None => call.ctx.instance.text.iter().map(|b| b.body.as_str()).collect::<Vec<_>>().join("\n"),
            };
            let s = text::sentiment(&body);
            let fields = BTreeMap::from([
                ("negative".into(), s.negative as f64),
                ("positive".into(), s.positive as f64),
            ]);
            Ok((Payload::Scalar { value: s.score, fields }, na))
        }
        "temporal_align_text" => {
            let inst = call.ctx.instance;
            let len = inst.series.len();
            let (start, end) = a::resolve_range(call.args.get("range").unwrap_or(&Value::Null), len)?;
            let events = match &inst.timestamps {
                Some(ts) => text::temporal_align(&inst.text, ts, start, end),
                None => Vec::new(),
            };
            Ok((Payload::EventList { events }, IndexTransform::Identity))
        }
        SPAWN => Err(ToolFailure::new("engine_handled", "spawn_subagent is executed by the episode engine")),
        other => Err(ToolFailure::new("not_implemented", format!("no built-in implementation for {other}"))),
    }
}

/// Splits a reference spec into an optional artifact id and the inner spec.
fn split_reference<'v>(reference: &'v Value, inner_key: &str) -> (Option<&'v str>, &'v Value) {
    if let Value::Object(o) = reference {
        if o.contains_key("artifact") || o.contains_key(inner_key) {
            return (o.get("artifact").and_then(Value::as_str), o.get(inner_key).unwrap_or(&Value::Null));
        }
    }
    (None, reference)
}

fn window_stats(call: &Call) -> ToolOutput {
    let s = call.series()?;
    let (start, end) = analysis::resolve_range(call.args.get("range").unwrap_or(&Value::Null), s.len())?;
    let win = &s[start..end];
    let mean = analysis::mean(win);
    let mut fields = BTreeMap::from([
        ("end".into(), end as f64),
        ("max".into(), win.iter().copied().fold(f64::NEG_INFINITY, f64::max)),
        ("mean".into(), mean),
        ("min".into(), win.iter().copied().fold(f64::INFINITY, f64::min)),
        ("n".into(), win.len() as f64),
        ("start".into(), start as f64),
    ]);
    if let Some(reference) = call.args.get("reference").filter(|v| !v.is_null()) {
        let (artifact, range) = split_reference(reference, "range");
        let rs = match artifact {
            Some(id) => call.artifact_series(id)?,
            None => s,
        };
        let (rstart, rend) = analysis::resolve_range(range, rs.len())?;
        let rmean = analysis::mean(&rs[rstart..rend]);
        fields.insert("reference_mean".into(), rmean);
        fields.insert("mean_delta_vs_reference".into(), mean - rmean);
    }
    Ok((Payload::Scalar { value: mean, fields }, IndexTransform::NotApplicable))
}

fn value_at(call: &Call) -> ToolOutput {
    let s = call.series()?;
    let which = call.args.get("which").cloned().unwrap_or_else(|| json!("last"));
    let idx = analysis::resolve_position(&which, s.len())?;
    let value = s[idx];
    let mut fields = BTreeMap::from([("index".into(), idx as f64)]);
    if let Some(reference) = call.args.get("reference").filter(|v| !v.is_null()) {
        let (artifact, pos) = split_reference(reference, "which");
        let rs = match artifact {
            Some(id) => call.artifact_series(id)?,
            None => s,
        };
        let r = rs[analysis::resolve_position(pos, rs.len())?];
        fields.insert("reference_value".into(), r);
        if r != 0.0 {
            fields.insert("pct_change_vs_reference".into(), (value - r) / r.abs() * 100.0);
        }
    }
    Ok((Payload::Scalar { value, fields }, IndexTransform::NotApplicable))
}

fn evaluate_one(candidate: &str, answer: Option<&Value>, truth: &Answer) -> CandidateReport {
    let parsed = answer.and_then(Answer::from_value);
    match parsed {
        None => CandidateReport {
            candidate: candidate.into(),
            report: None,
            error: Some("answer missing or not a task-typed value".into()),
        },
        Some(ans) => match MetricReport::evaluate(&ans, truth) {
            Ok(report) => CandidateReport { candidate: candidate.into(), report: Some(report), error: None },
            Err(e) => CandidateReport { candidate: candidate.into(), report: None, error: Some(e.to_string()) },
        },
    }
}

fn run_evaluator(tool: &str, call: &Call) -> Result<ToolOutput, CapabilityError> {
    let deny = |reason: String| CapabilityError { tool_id: tool.into(), reason };
    let cap = call.ctx.evaluator.ok_or_else(|| deny("evaluator capability not held".into()))?;
    let truth = call.ctx.instance.ground_truth(&cap).map_err(|e| deny(e.to_string()))?;
    let reports = if tool == EVALUATE {
        let candidate = call.args.get("candidate").and_then(Value::as_str).unwrap_or("candidate");
        vec![evaluate_one(candidate, call.args.get("answer"), truth)]
    } else {
        let Some(items) = call.args.get("answers").and_then(Value::as_array) else {
            return Ok(Err(ToolFailure::new("bad_parameter", "answers must be an array")));
        };
        items
            .iter()
            .enumerate()
            .map(|(i, item)| {
                let fallback = format!("candidate_{i}");
                let name = item.get("candidate").and_then(Value::as_str).unwrap_or(&fallback);
                evaluate_one(name, item.get("answer"), truth)
            })
            .collect()
    };
    Ok(Ok((Payload::MetricReport { reports }, IndexTransform::NotApplicable)))
}

/// Registry plus remote adapters; immutable and shareable across branches.
#[derive(Debug, Clone)]
pub struct Toolkit {
    registry: ToolRegistry,
    remote: BTreeMap<String, Arc<RemoteTool>>,
}

impl Default for Toolkit {
    fn default() -> Self {
        Self::builtin()
    }
}

impl Toolkit {
    pub fn new(registry: ToolRegistry) -> Self {
        Self { registry, remote: BTreeMap::new() }
    }

    pub fn builtin() -> Self {
        Self::new(builtin_registry())
    }

    pub fn registry(&self) -> &ToolRegistry {
        &self.registry
    }

    /// Registers a tool served over HTTP.
    pub fn with_remote(mut self, descriptor: ToolDescriptor, tool: RemoteTool) -> Result<Self, RegistryError> {
        let id = descriptor.tool_id.clone();
        self.registry.add(descriptor)?;
        self.remote.insert(id, Arc::new(tool));
        Ok(self)
    }

    pub fn invoke(
        &self,
        call: &ToolInvocation,
        ctx: &InvocationContext,
        store: &mut ArtifactStore,
    ) -> Result<ToolArtifact, CapabilityError> {
        let tool = call.tool_id.as_str();
        let digest = args_digest(tool, &call.args);
        let parents = if call.inputs.is_empty() { vec![ORIGINAL_INPUT.to_string()] } else { call.inputs.clone() };
        let provenance = |transform| Provenance {
            tool_id: tool.to_string(),
            args_digest: digest.clone(),
            parents: parents.clone(),
            transform,
        };
        let fail = |store: &mut ArtifactStore, f: ToolFailure| {
            store.insert(Payload::error(&f.code, f.message), provenance(IndexTransform::NotApplicable))
        };

        let Some(desc) = self.registry.get(tool) else {
            return Ok(fail(store, ToolFailure::new("unknown_tool", format!("tool {tool} is not registered"))));
        };
        if ctx.mode == Mode::Inference && !desc.category.is_task_facing() {
            return Err(CapabilityError {
                tool_id: tool.into(),
                reason: format!("{:?} tools are not available at inference", desc.category),
            });
        }
        if let Err(e) = desc.validate_args(&call.args) {
            return Ok(fail(store, ToolFailure::new("schema_violation", e.to_string())));
        }
        let mut inputs = Vec::with_capacity(call.inputs.len());
        for id in &call.inputs {
            match store.get(id) {
                Some(a) => inputs.push(a.clone()),
                None => return Ok(fail(store, ToolFailure::new("unknown_input", format!("no artifact {id}")))),
            }
        }
        let output = {
            let c = Call { ctx, args: &call.args, inputs: inputs.iter().collect(), store };
            if desc.category == ToolCategory::ExplorationOnly {
                run_evaluator(tool, &c)?
            } else if let Some(r) = self.remote.get(tool) {
                r.call(tool, &call.args, &c.inputs, c.series().unwrap_or(&[]), c.horizon().unwrap_or(ctx.instance.horizon))
            } else {
                run_builtin(tool, &c)
            }
        };
        Ok(match output.and_then(|(p, t)| p.check().map(|_| (p, t)).map_err(|m| ToolFailure::new("bad_payload", m))) {
            Ok((payload, transform)) => store.insert(payload, provenance(transform)),
            Err(f) => fail(store, f),
        })
    }
}

fn horizon_arg() -> ArgSpec {
    ArgSpec::optional("horizon", ArgKind::Integer, "steps ahead; defaults to the task horizon")
}

/// Descriptors of every built-in tool.
pub fn builtin_registry() -> ToolRegistry {
    use ArgKind::*;
    use Modality as M;
    use ToolCategory as C;
    let f = |id, d| ToolDescriptor::new(id, C::Forecasting, M::Numeric, d).arg(horizon_arg());
    let tools = vec![
        f("naive", "repeat the last observed value"),
        f("drift", "extrapolate the first-to-last slope"),
        f("seasonal_naive", "repeat the last full season")
            .arg(ArgSpec::optional("m", Integer, "season length; defaults to the detected period")),
        f("ses", "simple exponential smoothing").arg(ArgSpec::optional("alpha", Number, "level smoothing in [0,1]")),
        f("holt", "Holt linear trend smoothing")
            .arg(ArgSpec::optional("alpha", Number, "level smoothing in [0,1]"))
            .arg(ArgSpec::optional("beta", Number, "trend smoothing in [0,1]")),
        f("moving_average", "mean of the trailing window")
            .arg(ArgSpec::optional("window", Integer, "trailing window length")),
        ToolDescriptor::new("basic_stats", C::Analysis, M::Numeric, "length, mean, std, min, max, first, last")
            .protected_in("*"),
        ToolDescriptor::new("detect_trend", C::Analysis, M::Numeric, "least-squares trend label"),
        ToolDescriptor::new("detect_anomaly", C::Analysis, M::Numeric, "points with |z| above the threshold")
            .arg(ArgSpec::optional("threshold", Number, "z-score cut, default 3")),
        ToolDescriptor::new("autocorrelation", C::Analysis, M::Numeric, "lagged correlation and dominant period")
            .arg(ArgSpec::optional("lag", Integer, "lag, default 1")),
        ToolDescriptor::new("stationarity_check", C::Analysis, M::Numeric, "persistence and level-shift check"),
        ToolDescriptor::new("segment", C::Analysis, M::Numeric, "split into fixed windows")
            .arg(ArgSpec::required("window", Integer, "window length")),
        ToolDescriptor::new("window_slice", C::Analysis, M::Numeric, "cut a sub-series")
            .arg(ArgSpec::required("range", Any, "{last|first: n} or {start, end}")),
        ToolDescriptor::new("window_stats", C::Analysis, M::Numeric, "mean/min/max of a window")
            .arg(ArgSpec::optional("range", Any, "{last|first: n} or {start, end}"))
            .arg(ArgSpec::optional("reference", Any, "reference range, optionally {artifact, range}")),
        ToolDescriptor::new("value_at", C::Analysis, M::Numeric, "value at a position")
            .arg(ArgSpec::optional("which", Any, "first, last or an index"))
            .arg(ArgSpec::optional("reference", Any, "reference position, optionally {artifact, which}")),
        ToolDescriptor::new("keyword_extract", C::Text, M::Text, "most frequent content terms")
            .arg(ArgSpec::optional("k", Integer, "number of terms")),
        ToolDescriptor::new("sentiment_lexicon", C::Text, M::Text, "lexicon polarity in [-1, 1]")
            .arg(ArgSpec::optional("text", String, "text to score; defaults to the context")),
        ToolDescriptor::new("temporal_align_text", C::Text, M::Mixed, "text blocks dated inside a window")
            .arg(ArgSpec::optional("range", Any, "series window")),
        ToolDescriptor::new(EVALUATE, C::ExplorationOnly, M::Mixed, "score one candidate answer")
            .arg(ArgSpec::required("answer", Any, "candidate answer"))
            .arg(ArgSpec::optional("candidate", String, "candidate name")),
        ToolDescriptor::new(EVALUATE_BATCH, C::ExplorationOnly, M::Mixed, "score several candidate answers")
            .arg(ArgSpec::required("answers", Array, "[{candidate, answer}]")),
        ToolDescriptor::new(SPAWN, C::Orchestration, M::Mixed, "launch exploration branches")
            .arg(ArgSpec::optional("slots", Array, "per-branch goals and tool hints"))
            .arg(ArgSpec::optional("count", Integer, "number of branches")),
    ];
    ToolRegistry::new(tools).expect("built-in registry is consistent")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::TaskType;

    fn inst(series: Vec<f64>) -> TaskInstance {
        TaskInstance::new("x", series, TaskType::Forecast, 2, "finance_forecast_short")
            .with_ground_truth(Answer::Numeric(vec![1.0, 1.0]))
    }

    fn run(kit: &Toolkit, ctx: &InvocationContext, store: &mut ArtifactStore, tool: &str, args: Value) -> ToolArtifact {
        kit.invoke(&ToolInvocation::new(tool, args), ctx, store).unwrap()
    }

    #[test]
    fn value_at_reference() {
        let kit = Toolkit::builtin();
        let i = inst(vec![61.34, 61.5, 62.0, 61.94]);
        let ctx = InvocationContext::inference(&i);
        let mut store = ArtifactStore::new(&i.series);
        let a = run(&kit, &ctx, &mut store, "value_at", json!({"which": "last", "reference": "first"}));
        let Payload::Scalar { value, fields } = &a.payload else { panic!() };
        assert_eq!(*value, 61.94);
        let expect = (61.94 - 61.34) / 61.34 * 100.0;
        assert!((fields["pct_change_vs_reference"] - expect).abs() < 1e-12);
    }

    #[test]
    fn evaluate_rejected_in_inference() {
        let kit = Toolkit::builtin();
        let i = inst(vec![1.0, 2.0]);
        let ctx = InvocationContext::inference(&i);
        let mut store = ArtifactStore::new(&i.series);
        let err = kit.invoke(&ToolInvocation::new(EVALUATE, json!({"answer": [1, 1]})), &ctx, &mut store);
        assert!(err.is_err());
        assert!(kit.invoke(&ToolInvocation::new(SPAWN, json!({})), &ctx, &mut store).is_err());
    }

    #[test]
    fn evaluate_reports() {
        let kit = Toolkit::builtin();
        let i = inst(vec![1.0, 2.0]);
        let ctx = InvocationContext::exploration(&i, Some(EvaluatorCapability::exploration()));
        let mut store = ArtifactStore::new(&i.series);
        let a = run(&kit, &ctx, &mut store, EVALUATE, json!({"answer": [0.0, 2.0]}));
        let Payload::MetricReport { reports } = &a.payload else { panic!() };
        let r = reports[0].report.as_ref().unwrap();
        assert_eq!((r.mae, r.mse), (Some(1.0), Some(1.0)));
        let no_cap = InvocationContext::exploration(&i, None);
        assert!(kit.invoke(&ToolInvocation::new(EVALUATE, json!({"answer": [1]})), &no_cap, &mut store).is_err());
    }

    #[test]
    fn schema_violation_is_in_band() {
        let kit = Toolkit::builtin();
        let i = inst(vec![1.0, 2.0, 3.0]);
        let ctx = InvocationContext::inference(&i);
        let mut store = ArtifactStore::new(&i.series);
        let a = run(&kit, &ctx, &mut store, "segment", json!({"window": "wide"}));
        assert!(a.payload.is_error());
        let a = run(&kit, &ctx, &mut store, "naive", json!({"bogus": 1}));
        assert!(a.payload.is_error());
        let a = run(&kit, &ctx, &mut store, "no_such_tool", json!({}));
        assert!(a.payload.is_error());
        let a = run(&kit, &ctx, &mut store, "naive", json!({"inputs": ["missing"]}));
        assert!(a.payload.is_error());
    }

    #[test]
    fn provenance_composes_to_original() {
        let kit = Toolkit::builtin();
        let series: Vec<f64> = (0..50).map(|i| i as f64).collect();
        let i = inst(series);
        let ctx = InvocationContext::inference(&i);
        let mut store = ArtifactStore::new(&i.series).with_prefix("b0");
        let w = run(&kit, &ctx, &mut store, "window_slice", json!({"range": {"last": 10}}));
        assert_eq!(w.artifact_id, "b0.a1");
        let f = run(&kit, &ctx, &mut store, "naive", json!({"inputs": [w.artifact_id.clone()], "horizon": 3}));
        assert_eq!(store.to_original(&w.artifact_id, 0), Some(40));
        assert_eq!(store.to_original(&f.artifact_id, 0), Some(50));
        let f2 = run(&kit, &ctx, &mut store, "drift", json!({"horizon": 3}));
        assert_eq!(store.to_original(&f2.artifact_id, 2), Some(52));
        let s = run(&kit, &ctx, &mut store, "basic_stats", json!({}));
        assert_eq!(store.to_original(&s.artifact_id, 0), None);
    }

    #[test]
    fn deterministic_artifacts() {
        let kit = Toolkit::builtin();
        let i = inst((0..40).map(|t| (t as f64 * 0.7).sin()).collect());
        let ctx = InvocationContext::inference(&i);
        let calls = [
            ("seasonal_naive", json!({})),
            ("holt", json!({"alpha": 0.5})),
            ("autocorrelation", json!({"lag": 2})),
            ("detect_anomaly", json!({})),
        ];
        let go = || {
            let mut store = ArtifactStore::new(&i.series);
            calls.iter().map(|(t, a)| serde_json::to_string(&run(&kit, &ctx, &mut store, t, a.clone())).unwrap()).collect::<Vec<_>>()
        };
        assert_eq!(go(), go());
    }
}
