//! Deterministic rule-based agent that reads the prompt frames. Used as the
//! offline policy behind recorded mock scripts and in simulations.

use std::collections::{BTreeMap, BTreeSet};

use serde_json::{json, Value};

use super::{AssistantMessage, ChatBackend, ChatExchange, GatewayError, Role};
use crate::store::{best_tool, tool_scores};
use crate::toolkit::{EVALUATE_BATCH, SPAWN};

/// Trend rule band on the day-mean delta.
const DELTA_BAND: f64 = 0.5;

/// Injected misbehaviour for contract and fallback fixtures.
#[derive(Debug, Clone, Default)]
pub struct HeuristicOptions {
    /// Every branch uses `naive` (forecast) or `detect_trend` (labels).
    pub identical_branches: bool,
    /// Branches in these slots reply with unparseable text.
    pub malformed_slots: BTreeSet<usize>,
    /// Branches in these slots fail at the transport level.
    pub failing_slots: BTreeSet<usize>,
    /// Overrides the `answer_type` of the main agent's final message.
    pub final_type: Option<String>,
    pub skip_evaluate: bool,
    /// Inference ignores injected memory rules.
    pub ignore_memory: bool,
}

#[derive(Debug, Clone, Default)]
pub struct HeuristicAgent {
    pub options: HeuristicOptions,
}

impl HeuristicAgent {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_options(options: HeuristicOptions) -> Self {
        Self { options }
    }
}

#[derive(Debug, Clone)]
struct Tool {
    name: String,
    category: String,
}

#[derive(Debug, Default)]
struct Task {
    task_type: String,
    horizon: usize,
    series_length: usize,
    labels: Vec<String>,
    fields: Vec<String>,
    metric: String,
    seasonal: Option<bool>,
    recent: Vec<f64>,
    tools: Vec<Tool>,
}

fn value_of<'a>(text: &'a str, key: &str) -> Option<&'a str> {
    text.lines().find_map(|l| {
        let l = l.trim();
        let rest = l.strip_prefix(key)?;
        let rest = rest.trim_start();
        rest.strip_prefix(':').or_else(|| rest.strip_prefix('=')).map(str::trim)
    })
}

fn split_list(v: &str, sep: char) -> Vec<String> {
    v.split(sep).map(|s| s.trim().to_string()).filter(|s| !s.is_empty() && s != "none").collect()
}

fn parse_task(user: &str) -> Task {
    let mut t = Task {
        task_type: value_of(user, "task_type").unwrap_or("forecast").to_string(),
        horizon: value_of(user, "horizon").and_then(|v| v.parse().ok()).unwrap_or(1),
        series_length: value_of(user, "series_length").and_then(|v| v.parse().ok()).unwrap_or(0),
        labels: value_of(user, "labels").map(|v| split_list(v, '|')).unwrap_or_default(),
        fields: value_of(user, "indicator_fields").map(|v| split_list(v, '|')).unwrap_or_default(),
        metric: value_of(user, "supervision_metric").unwrap_or("mae").to_string(),
        seasonal: value_of(user, "dominant_period").map(|v| v.contains(", significant)")),
        recent: value_of(user, "recent_values")
            .map(|v| v.split_whitespace().filter_map(|x| x.parse().ok()).collect())
            .unwrap_or_default(),
        tools: Vec::new(),
    };
    if let Some((_, tail)) = user.split_once("### Available Tools") {
        for l in tail.lines() {
            let Some(rest) = l.trim().strip_prefix("- ") else { continue };
            let Some((name, rest)) = rest.split_once(" [") else { continue };
            let Some((cat, _)) = rest.split_once(']') else { continue };
            t.tools.push(Tool { name: name.to_string(), category: cat.to_string() });
        }
    }
    t
}

impl Task {
    fn has(&self, tool: &str) -> bool {
        self.tools.iter().any(|t| t.name == tool)
    }

    fn category(&self, tool: &str) -> Option<&str> {
        self.tools.iter().find(|t| t.name == tool).map(|t| t.category.as_str())
    }

    fn is_label(&self) -> bool {
        !matches!(self.task_type.as_str(), "forecast" | "indicator")
    }

    fn day(&self) -> usize {
        if self.series_length >= 48 {
            24
        } else {
            (self.series_length / 2).max(1)
        }
    }

    /// Tools that can produce the answer directly.
    fn primary_tools(&self) -> Vec<String> {
        match self.task_type.as_str() {
            "forecast" => self.tools.iter().filter(|t| t.category == "forecasting").map(|t| t.name.clone()).collect(),
            "indicator" => ["basic_stats"].iter().filter(|t| self.has(t)).map(|t| t.to_string()).collect(),
            _ => ["detect_trend", "window_stats", "value_at"].iter().filter(|t| self.has(t)).map(|t| t.to_string()).collect(),
        }
    }

    fn default_tool(&self) -> &'static str {
        match self.task_type.as_str() {
            "forecast" => "naive",
            "indicator" => "basic_stats",
            _ => "detect_trend",
        }
    }

    fn to_label(&self, direction: &str) -> String {
        if self.labels.iter().any(|l| l == direction) {
            return direction.to_string();
        }
        let keys: &[&str] = match direction {
            "increasing" => &["increas", "up", "rise", "positive", "+"],
            "decreasing" => &["decreas", "down", "fall", "negative", "-"],
            _ => &["stable", "neutral", "flat", "unchanged"],
        };
        for k in keys {
            if let Some(l) = self.labels.iter().find(|l| l.to_lowercase().contains(k)) {
                return l.clone();
            }
        }
        let mut sorted = self.labels.clone();
        sorted.sort();
        sorted.into_iter().next().unwrap_or_else(|| direction.to_string())
    }
}

#[derive(Debug)]
struct Step {
    name: String,
    result: Value,
}

fn steps(ex: &ChatExchange) -> Vec<Step> {
    let mut out = Vec::new();
    for (i, m) in ex.messages.iter().enumerate() {
        if m.role != Role::Assistant {
            continue;
        }
        for call in &m.tool_calls {
            let result = ex.messages[i + 1..]
                .iter()
                .find(|r| r.role == Role::Tool && r.tool_call_id.as_deref() == Some(call.id.as_str()))
                .map(|r| serde_json::from_str(&r.content).unwrap_or(Value::String(r.content.clone())))
                .unwrap_or(Value::Null);
            out.push(Step { name: call.name.clone(), result });
        }
    }
    out
}

fn is_error(v: &Value) -> bool {
    v.get("payload").and_then(|p| p.get("error")).is_some_and(|e| !e.is_null())
        || v.get("error").is_some_and(|e| !e.is_null())
}

enum Act {
    Call(String, Value),
    Answer(Value),
}

fn label_args(task: &Task, tool: &str) -> Value {
    let n = task.series_length;
    let d = task.day();
    match tool {
        "window_stats" if n >= 2 * d => json!({"range": {"last": d}, "reference": {"start": n - 2 * d, "end": n - d}}),
        "value_at" if n > d => json!({"which": "last", "reference": n - 1 - d}),
        _ => json!({}),
    }
}

fn direction(delta: f64) -> &'static str {
    if delta > DELTA_BAND {
        "increasing"
    } else if delta < -DELTA_BAND {
        "decreasing"
    } else {
        "stable"
    }
}

fn tool_args(task: &Task, tool: &str) -> Value {
    match tool {
        "segment" => json!({"window": task.day()}),
        "window_slice" => json!({"range": {"last": task.day().max(2)}}),
        _ if task.is_label() => label_args(task, tool),
        _ => json!({}),
    }
}

/// Next action for a task-solving agent whose preferred first tool is `first`.
fn solve(task: &Task, first: &str, done: &[Step]) -> Act {
    let called = |t: &str| done.iter().any(|s| s.name == t);
    if done.is_empty() {
        return Act::Call(first.to_string(), tool_args(task, first));
    }
    match task.task_type.as_str() {
        "forecast" => {
            for s in done.iter().rev() {
                if task.category(&s.name) == Some("forecasting") && !is_error(&s.result) {
                    if let Some(v) = s.result.get("payload").and_then(|p| p.get("values")) {
                        return Act::Answer(json!({"answer": v}));
                    }
                }
            }
            for fallback in ["naive", "drift"] {
                if task.has(fallback) && !called(fallback) {
                    return Act::Call(fallback.into(), json!({}));
                }
            }
            let last = task.recent.last().copied().unwrap_or(0.0);
            Act::Answer(json!({"answer": vec![last; task.horizon.max(1)]}))
        }
        "indicator" => {
            for s in done.iter().rev() {
                if s.name == "basic_stats" && !is_error(&s.result) {
                    let f = s.result.get("payload").and_then(|p| p.get("fields")).cloned().unwrap_or(Value::Null);
                    let get = |k: &str| f.get(k).and_then(Value::as_f64);
                    let mut out = serde_json::Map::new();
                    for name in &task.fields {
                        let v = match name.as_str() {
                            "diff" => get("last").zip(get("first")).map(|(l, f)| l - f),
                            other => get(other),
                        };
                        out.insert(name.clone(), json!(v.unwrap_or(0.0)));
                    }
                    return Act::Answer(json!({"answer": out}));
                }
            }
            if task.has("basic_stats") && !called("basic_stats") {
                return Act::Call("basic_stats".into(), json!({}));
            }
            let out: BTreeMap<&String, f64> = task.fields.iter().map(|f| (f, 0.0)).collect();
            Act::Answer(json!({"answer": out}))
        }
        _ => {
            for s in done.iter().rev() {
                if is_error(&s.result) {
                    continue;
                }
                let p = s.result.get("payload").cloned().unwrap_or(Value::Null);
                let fields = p.get("fields").cloned().unwrap_or(Value::Null);
                let dir = match s.name.as_str() {
                    "detect_trend" => p.get("label").and_then(Value::as_str).map(str::to_string),
                    "window_stats" => {
                        fields.get("mean_delta_vs_reference").and_then(Value::as_f64).map(|d| direction(d).to_string())
                    }
                    "value_at" => match (p.get("value").and_then(Value::as_f64), fields.get("reference_value").and_then(Value::as_f64)) {
                        (Some(v), Some(r)) => Some(direction(v - r).to_string()),
                        _ => None,
                    },
                    _ => None,
                };
                if let Some(d) = dir {
                    return Act::Answer(json!({"answer": task.to_label(&d)}));
                }
            }
            if task.has("detect_trend") && !called("detect_trend") {
                return Act::Call("detect_trend".into(), json!({}));
            }
            Act::Answer(json!({"answer": task.to_label("stable")}))
        }
    }
}

struct Rule {
    preferred: BTreeSet<String>,
    avoided: BTreeSet<String>,
    confidence: f64,
}

fn parse_rules(system: &str) -> Vec<Rule> {
    let mut out = Vec::new();
    let Some((_, mem)) = system.split_once("# Memory") else { return out };
    for block in mem.split("\n## Rule ").skip(1) {
        let confidence = block
            .lines()
            .next()
            .and_then(|h| h.split("confidence ").nth(1))
            .and_then(|c| c.trim_end_matches(')').trim().parse().ok())
            .unwrap_or(0.5);
        let set = |k| value_of(block, k).map(|v| split_list(v, ',').into_iter().collect()).unwrap_or_default();
        out.push(Rule { preferred: set("preferred_tools"), avoided: set("avoided_tools"), confidence });
    }
    out
}

fn reply(ex: &ChatExchange, act: Act) -> AssistantMessage {
    match act {
        Act::Call(name, args) => {
            let n = ex.messages.iter().filter(|m| m.role == Role::Assistant).count();
            AssistantMessage::call(&format!("call_{n}"), &name, &args)
        }
        Act::Answer(v) => AssistantMessage::text(v.to_string()),
    }
}

impl HeuristicAgent {
    fn main_agent(&self, ex: &ChatExchange, task: &Task, user: &str) -> AssistantMessage {
        let done = steps(ex);
        let spawn = done.iter().find(|s| s.name == SPAWN);
        let eval = done.iter().find(|s| s.name == EVALUATE_BATCH);
        let Some(spawn) = spawn else {
            let mut slots = Vec::new();
            if let Some((_, tail)) = user.split_once("### Slot Hints") {
                for l in tail.lines().map(str::trim).take_while(|l| !l.starts_with("###")) {
                    let Some(rest) = l.strip_prefix("- slot ") else { continue };
                    let parts: Vec<&str> = rest.split(" | ").collect();
                    let field = |k: &str| parts.iter().find_map(|p| p.strip_prefix(k)).unwrap_or("").to_string();
                    slots.push(json!({
                        "slot": parts[0].trim().parse::<usize>().unwrap_or(slots.len()),
                        "role": field("role="),
                        "hint": field("hint="),
                        "goal": field("goal="),
                    }));
                }
            }
            return reply(ex, Act::Call(SPAWN.into(), json!({"slots": slots})));
        };
        let branches: Vec<Value> = spawn.result.get("branches").and_then(Value::as_array).cloned().unwrap_or_default();
        if eval.is_none() && !self.options.skip_evaluate {
            let answers: Vec<Value> = branches
                .iter()
                .filter(|b| b.get("valid").and_then(Value::as_bool).unwrap_or(false))
                .map(|b| json!({"candidate": b["branch_id"], "answer": b["answer"]}))
                .collect();
            return reply(ex, Act::Call(EVALUATE_BATCH.into(), json!({"answers": answers})));
        }
        let reports: Vec<Value> = eval
            .and_then(|e| e.result.get("payload"))
            .and_then(|p| p.get("reports"))
            .and_then(Value::as_array)
            .cloned()
            .unwrap_or_default();
        let higher_better = task.metric == "accuracy";
        let mut scored: Vec<(String, f64)> = reports
            .iter()
            .filter_map(|r| {
                let rep = r.get("report")?;
                let v = if higher_better {
                    rep.get("correct")?.as_bool().map(|c| if c { 1.0 } else { 0.0 })?
                } else {
                    rep.get(task.metric.as_str())?.as_f64()?
                };
                Some((r.get("candidate")?.as_str()?.to_string(), v))
            })
            .collect();
        scored.sort_by(|a, b| if higher_better { b.1.total_cmp(&a.1) } else { a.1.total_cmp(&b.1) });
        let chain = |id: &str| {
            branches
                .iter()
                .find(|b| b["branch_id"] == id)
                .and_then(|b| b.get("tool_chain"))
                .and_then(Value::as_array)
                .map(|c| c.iter().filter_map(Value::as_str).collect::<Vec<_>>().join(" -> "))
                .unwrap_or_default()
        };
        let seasonal = task.seasonal.map(|s| format!(" with seasonal={s}")).unwrap_or_default();
        let (insight, recommendation) = match scored.as_slice() {
            [] => (
                "No branch answer could be scored.".to_string(),
                "Check tool preconditions before choosing a strategy.".to_string(),
            ),
            [(w, v)] => (
                format!("Only {} was scored ({} {v:.3}); nothing to compare against.", chain(w), task.metric),
                format!("Keep {} as a working option for {} samples{seasonal}.", chain(w), task.task_type),
            ),
            [(w, v), rest @ ..] => {
                let others: Vec<String> = rest.iter().map(|(l, lv)| format!("{} at {} {lv:.3}", chain(l), task.metric)).collect();
                (
                    format!(
                        "{} reached {} {v:.3} against {}; the lower-error path was {}.",
                        chain(w),
                        task.metric,
                        others.join(", "),
                        chain(w)
                    ),
                    format!("Prefer {} for {} samples{seasonal}.", chain(w), task.task_type),
                )
            }
        };
        let answer_type = self.options.final_type.clone().unwrap_or_else(|| "learning_summary".into());
        reply(ex, Act::Answer(json!({"answer_type": answer_type, "insight": insight, "recommendation": recommendation})))
    }

    fn branch_agent(&self, ex: &ChatExchange, task: &Task, user: &str) -> Result<AssistantMessage, GatewayError> {
        let slot: usize = value_of(user, "slot").and_then(|v| v.parse().ok()).unwrap_or(0);
        if self.options.failing_slots.contains(&slot) {
            return Err(GatewayError::Transport { message: format!("injected failure for slot {slot}"), attempts: 1 });
        }
        if self.options.malformed_slots.contains(&slot) {
            return Ok(AssistantMessage::text("I could not settle on an answer."));
        }
        let hint = value_of(user, "tool_hint").unwrap_or("").to_string();
        let first = if self.options.identical_branches || !task.has(&hint) { task.default_tool().to_string() } else { hint };
        Ok(reply(ex, solve(task, &first, &steps(ex))))
    }

    fn inference_agent(&self, ex: &ChatExchange, task: &Task) -> AssistantMessage {
        let candidates = task.primary_tools();
        let chosen = if self.options.ignore_memory {
            None
        } else {
            let rules = parse_rules(ex.system_text());
            let scores = tool_scores(rules.iter().map(|r| (&r.preferred, &r.avoided, r.confidence)));
            best_tool(&scores, candidates.iter())
        };
        let first = chosen.unwrap_or_else(|| task.default_tool().to_string());
        reply(ex, solve(task, &first, &steps(ex)))
    }
}

impl ChatBackend for HeuristicAgent {
    fn complete(&self, ex: &ChatExchange) -> Result<AssistantMessage, GatewayError> {
        ex.validate()?;
        let user = ex.first_user_text();
        let task = parse_task(user);
        if ex.declares(SPAWN) {
            Ok(self.main_agent(ex, &task, user))
        } else if user.contains("### Branch Goal") {
            self.branch_agent(ex, &task, user)
        } else {
            Ok(self.inference_agent(ex, &task))
        }
    }

    fn name(&self) -> &str {
        "heuristic"
    }
}
