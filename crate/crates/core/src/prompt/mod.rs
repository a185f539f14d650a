//! Prompt frames for exploration, exploration branches and inference, plus
//! the sample fingerprint they are built around.
//!
//! Frame order is fixed: `## Objective`, `## Observation`, `## Decision`,
//! then `### Available Tools`. Soul and memory go to the system text; skills
//! and tool notes go to the Support block of the user text.

mod fingerprint;

use std::fmt::Write as _;

use thiserror::Error;

pub use fingerprint::{fingerprint, length_band, matches, Applicability, SampleFingerprint};

use crate::gateway::{ChatMessage, ToolSchema};
use crate::model::{BranchRole, TaskInstance, TaskType};
use crate::orchestrator::SlotAssignment;
use crate::registry::{ToolCategory, ToolDescriptor};
use crate::store::{MemoryRule, Selection};
use crate::toolkit::{analysis, ANOMALY_Z, EVALUATE_BATCH, SPAWN};

/// Default per-layer character cap.
pub const DEFAULT_LAYER_CAP: usize = 4000;

const RECENT_VALUES: usize = 12;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PromptError {
    #[error("rule M{0} is not injectable")]
    NonInjectableRule(u64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptBundle {
    pub system: String,
    pub user: String,
    pub tools: Vec<ToolSchema>,
}

impl PromptBundle {
    pub fn messages(&self) -> Vec<ChatMessage> {
        vec![ChatMessage::system(self.system.clone()), ChatMessage::user(self.user.clone())]
    }

    pub fn tool_names(&self) -> Vec<&str> {
        self.tools.iter().map(|t| t.name.as_str()).collect()
    }
}

pub fn tool_schema(d: &ToolDescriptor) -> ToolSchema {
    ToolSchema { name: d.tool_id.clone(), description: d.description.clone(), parameters: d.json_schema() }
}

fn category_name(c: ToolCategory) -> &'static str {
    match c {
        ToolCategory::Forecasting => "forecasting",
        ToolCategory::Analysis => "analysis",
        ToolCategory::Text => "text",
        ToolCategory::ExplorationOnly => "exploration_only",
        ToolCategory::Orchestration => "orchestration",
    }
}

pub fn role_name(r: BranchRole) -> &'static str {
    match r {
        BranchRole::PriorGuided => "prior_guided",
        BranchRole::Alternative => "alternative",
        BranchRole::Free => "free",
    }
}

fn cap(text: &str, limit: usize) -> String {
    if text.chars().count() <= limit {
        return text.to_string();
    }
    let mut s: String = text.chars().take(limit).collect();
    s.push_str(" [truncated]");
    s
}

fn num(v: f64) -> String {
    format!("{v:.4}")
}

fn join_or_none<'a>(items: impl IntoIterator<Item = &'a String>) -> String {
    let v: Vec<&str> = items.into_iter().map(String::as_str).collect();
    if v.is_empty() {
        "none".into()
    } else {
        v.join(", ")
    }
}

/// Builds prompt bundles with a fixed per-layer character cap.
#[derive(Debug, Clone, Copy)]
pub struct PromptAssembler {
    pub layer_cap: usize,
}

impl Default for PromptAssembler {
    fn default() -> Self {
        Self { layer_cap: DEFAULT_LAYER_CAP }
    }
}

enum Frame<'a> {
    Exploration(&'a [SlotAssignment]),
    Branch(&'a SlotAssignment),
    Inference,
}

impl PromptAssembler {
    pub fn new(layer_cap: usize) -> Self {
        Self { layer_cap }
    }

    pub fn exploration(
        &self,
        view: &TaskInstance,
        selection: &Selection,
        slots: &[SlotAssignment],
        tools: &[&ToolDescriptor],
    ) -> PromptBundle {
        self.bundle(view, selection, Frame::Exploration(slots), tools.to_vec())
    }

    pub fn branch(
        &self,
        view: &TaskInstance,
        selection: &Selection,
        slot: &SlotAssignment,
        tools: &[&ToolDescriptor],
    ) -> PromptBundle {
        let tools = tools.iter().copied().filter(|t| t.category.is_task_facing()).collect();
        self.bundle(view, selection, Frame::Branch(slot), tools)
    }

    pub fn inference(
        &self,
        view: &TaskInstance,
        selection: &Selection,
        tools: &[&ToolDescriptor],
    ) -> Result<PromptBundle, PromptError> {
        if let Some(r) = selection.rules.iter().find(|r| !r.injectable) {
            return Err(PromptError::NonInjectableRule(r.id));
        }
        let tools = tools.iter().copied().filter(|t| t.category.is_task_facing()).collect();
        Ok(self.bundle(view, selection, Frame::Inference, tools))
    }

    fn bundle(&self, view: &TaskInstance, sel: &Selection, frame: Frame, tools: Vec<&ToolDescriptor>) -> PromptBundle {
        let system = self.system_text(sel);
        let fp = fingerprint(view);
        let mut u = String::new();

        u.push_str("## Objective\n\n### Task Prompt\n");
        u.push_str(&task_prompt(view));
        u.push_str("\n### Task Boundary\n");
        u.push_str(&task_boundary(view));
        u.push_str("\n### Execution Context\n");
        let (mode, state, final_type) = match frame {
            Frame::Exploration(_) => ("exploration", "need_evidence", "learning_summary"),
            Frame::Branch(_) => ("exploration_branch", "branch_execution", view.task_type.as_str()),
            Frame::Inference => ("inference", "answer", view.task_type.as_str()),
        };
        let _ = writeln!(u, "mode = {mode}");
        u.push_str("\n### Control Context\n");
        let _ = writeln!(u, "state = {state}");
        let _ = writeln!(u, "required_final_type = {final_type}");
        if let Frame::Exploration(_) = frame {
            let _ = writeln!(u, "supervision_metric = {}", view.supervision_metric().key());
            u.push_str("min_valid_candidates = 2\n");
        }
        u.push_str("\n### Output Contract\n");
        match frame {
            Frame::Exploration(_) => {
                let _ = writeln!(u, "Each branch answer must follow: {}", answer_contract(view));
                u.push_str(
                    "Finish the episode with JSON {\"answer_type\": \"learning_summary\", \"insight\": \"...\", \"recommendation\": \"...\"}.\n",
                );
            }
            _ => {
                let _ = writeln!(u, "{}", answer_contract(view));
            }
        }

        u.push_str("\n## Observation\n\n### Sample Fingerprint\n");
        u.push_str(&fingerprint_block(view, &fp));
        u.push_str("\n### Profiling\n");
        u.push_str(&profiling_block(&view.series));
        u.push_str("\n### Support\n");
        u.push_str(&self.support_block(sel));

        u.push_str("\n## Decision\n\n");
        match frame {
            Frame::Exploration(slots) => {
                u.push_str("### Spawn Guidance\n");
                let _ = writeln!(
                    u,
                    "Call {SPAWN} once with one entry per slot hint. The first round must create at least 2 branches with different tools."
                );
                u.push_str("\n### Evaluate Guidance\n");
                let _ = writeln!(
                    u,
                    "When branches return, call {EVALUATE_BATCH} with every valid branch answer before finishing. Compare the metrics and name the lower-error path in the insight."
                );
                if slots.iter().any(|s| s.role == BranchRole::PriorGuided) {
                    u.push_str("\n### Prior Requirement\n");
                    u.push_str("Prior experience exists for this sample. Keep one prior-guided branch and one alternative branch.\n");
                }
                u.push_str("\n### Slot Hints\n");
                for s in slots {
                    let _ = writeln!(u, "- slot {} | role={} | hint={} | goal={}", s.slot, role_name(s.role), s.hint, s.goal);
                }
            }
            Frame::Branch(s) => {
                u.push_str("### Branch Goal\n");
                let _ = writeln!(u, "slot: {}", s.slot);
                let _ = writeln!(u, "role: {}", role_name(s.role));
                let _ = writeln!(u, "tool_hint: {}", s.hint);
                let _ = writeln!(u, "goal: {}", s.goal);
                u.push_str("\n### Completion\n");
                u.push_str("Use the hinted tool first, then reply with the output contract. One tool call per turn.\n");
            }
            Frame::Inference => {
                u.push_str("### Completion\n");
                u.push_str("Use the available tools as needed, one call per turn, then reply with the output contract.\n");
            }
        }

        u.push_str("\n### Available Tools\n");
        for t in &tools {
            let _ = writeln!(u, "- {} [{}]: {}", t.tool_id, category_name(t.category), t.description);
        }

        PromptBundle { system, user: u, tools: tools.into_iter().map(tool_schema).collect() }
    }

    fn system_text(&self, sel: &Selection) -> String {
        let mut s = String::from("# Soul\n");
        s.push_str(&cap(sel.soul.trim(), self.layer_cap));
        s.push('\n');
        if !sel.rules.is_empty() {
            let mut mem = String::new();
            for r in &sel.rules {
                mem.push_str(&render_rule(r));
            }
            s.push_str("\n# Memory\n");
            s.push_str(&cap(&mem, self.layer_cap));
        }
        s
    }

    fn support_block(&self, sel: &Selection) -> String {
        let mut s = String::new();
        if !sel.rules.is_empty() {
            let ids: Vec<String> = sel.rules.iter().map(|r| format!("M{}", r.id)).collect();
            let _ = writeln!(s, "memory_rules: {}", ids.join(", "));
        }
        if let Some(sk) = sel.skills.as_deref().filter(|t| !t.trim().is_empty()) {
            s.push_str("\n#### Skills\n");
            s.push_str(&cap(sk.trim(), self.layer_cap));
            s.push('\n');
        }
        if let Some(sk) = sel.skills_decision.as_deref().filter(|t| !t.trim().is_empty()) {
            s.push_str("\n#### Decision Skills\n");
            s.push_str(&cap(sk.trim(), self.layer_cap));
            s.push('\n');
        }
        if !sel.tool_notes.is_empty() {
            s.push_str("\n#### Tool Notes\n");
            for (tool, note) in &sel.tool_notes {
                let _ = writeln!(s, "- {tool}: {}", cap(note.trim(), self.layer_cap).replace('\n', " "));
            }
        }
        if s.is_empty() {
            s.push_str("No stored experience applies to this sample.\n");
        }
        s
    }
}

fn render_rule(r: &MemoryRule) -> String {
    format!(
        "\n## Rule M{} ({}, confidence {:.2})\napplies_when: {}\npreferred_tools: {}\navoided_tools: {}\nsummary: {}\nrationale: {}\n",
        r.id,
        r.kind.as_str(),
        r.confidence,
        r.applicability.describe(),
        join_or_none(&r.preferred_tools),
        join_or_none(&r.avoided_tools),
        r.summary,
        r.rationale,
    )
}

fn task_prompt(v: &TaskInstance) -> String {
    let mut s = match v.task_type {
        TaskType::Forecast => format!("Forecast the next {} values of the series.\n", v.horizon),
        TaskType::Indicator => {
            format!("Report the indicator fields {} computed over the series.\n", v.indicator_fields.join(", "))
        }
        TaskType::Trend => "Classify the recent trend of the series into one of the allowed labels.\n".into(),
        TaskType::TrendPast => "Classify the past trend of the series into one of the allowed labels.\n".into(),
        TaskType::Correlation => "Classify how the text context relates to the series movement.\n".into(),
        TaskType::Mcqa => "Choose the option that best answers the question about the series.\n".into(),
    };
    if !v.text.is_empty() {
        s.push_str("Context:\n");
        for b in &v.text {
            let body: String = b.body.chars().take(300).collect();
            match &b.date {
                Some(d) => {
                    let _ = writeln!(s, "- [{d}] {body}");
                }
                None => {
                    let _ = writeln!(s, "- {body}");
                }
            }
        }
    }
    s
}

fn task_boundary(v: &TaskInstance) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "task_type: {}", v.task_type.as_str());
    let _ = writeln!(s, "scope: {}", v.scope);
    let _ = writeln!(s, "series_length: {}", v.series.len());
    if v.task_type.is_numeric() {
        let _ = writeln!(s, "horizon: {}", v.horizon);
    }
    if let Some(labels) = &v.label_space {
        let _ = writeln!(s, "labels: {}", labels.join(" | "));
    }
    if v.task_type == TaskType::Indicator {
        let _ = writeln!(s, "indicator_fields: {}", v.indicator_fields.join(" | "));
    }
    if let Some(ts) = &v.timestamps {
        if let (Some(a), Some(b)) = (ts.first(), ts.last()) {
            let _ = writeln!(s, "timestamps: {a} .. {b}");
        }
    }
    if !v.text.is_empty() {
        let _ = writeln!(s, "context_blocks: {}", v.text.len());
    }
    s
}

fn answer_contract(v: &TaskInstance) -> String {
    match v.task_type {
        TaskType::Forecast => {
            format!("JSON {{\"answer\": [..]}} holding {} numbers.", v.horizon)
        }
        TaskType::Indicator => {
            let fields: Vec<String> = v.indicator_fields.iter().map(|f| format!("\"{f}\": <number>")).collect();
            format!("JSON {{\"answer\": {{{}}}}}.", fields.join(", "))
        }
        _ => "JSON {\"answer\": \"<label>\"} with a label from the task boundary.".into(),
    }
}

fn fingerprint_block(v: &TaskInstance, fp: &SampleFingerprint) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "length: {}", fp.length);
    let _ = writeln!(
        s,
        "first: {} | last: {} | min: {} | max: {} | mean: {} | std: {}",
        num(fp.first),
        num(fp.last),
        num(fp.min),
        num(fp.max),
        num(fp.mean),
        num(fp.std)
    );
    match (fp.dominant_period, fp.period_strength) {
        (Some(p), Some(st)) => {
            let sig = if fp.period_significant { "significant" } else { "not significant" };
            let _ = writeln!(s, "dominant_period: {p} (strength {}, {sig})", num(st));
        }
        _ => s.push_str("dominant_period: none\n"),
    }
    let _ = writeln!(s, "trend_class: {} (score {})", fp.trend_class, num(fp.trend_score));
    let _ = writeln!(s, "boundary_event: {}", fp.boundary_event);
    let _ = writeln!(s, "task_subtype: {}", fp.task_subtype);
    let _ = writeln!(s, "length_band: {}", fp.length_band());
    let tail = &v.series[v.series.len().saturating_sub(RECENT_VALUES)..];
    let tail: Vec<String> = tail.iter().map(|x| num(*x)).collect();
    let _ = writeln!(s, "recent_values: {}", tail.join(" "));
    s
}

fn profiling_block(xs: &[f64]) -> String {
    let mut s = String::new();
    match analysis::basic_stats(xs) {
        Ok(b) => {
            let _ = writeln!(
                s,
                "basic_stats: n={} mean={} std={} min={} max={}",
                b.n,
                num(b.mean),
                num(b.std),
                num(b.min),
                num(b.max)
            );
        }
        Err(e) => {
            let _ = writeln!(s, "basic_stats: unavailable ({})", e.code);
        }
    }
    match analysis::lagged_correlation(xs, 1) {
        Ok(r) => {
            let _ = writeln!(s, "autocorrelation: lag1={}", num(r));
        }
        Err(e) => {
            let _ = writeln!(s, "autocorrelation: unavailable ({})", e.code);
        }
    }
    match analysis::stationarity_check(xs) {
        Ok(st) => {
            let label = if st.stationary { "stationary" } else { "non_stationary" };
            let _ = writeln!(s, "stationarity_check: {label} acf1={} mean_shift={}", num(st.acf1), num(st.mean_shift));
        }
        Err(e) => {
            let _ = writeln!(s, "stationarity_check: unavailable ({})", e.code);
        }
    }
    match analysis::detect_trend(xs) {
        Ok(t) => {
            let _ = writeln!(s, "detect_trend: {} slope={} score={}", t.label, num(t.slope), num(t.score));
        }
        Err(e) => {
            let _ = writeln!(s, "detect_trend: unavailable ({})", e.code);
        }
    }
    let n = analysis::detect_anomalies(xs, ANOMALY_Z).len();
    let _ = writeln!(s, "detect_anomaly: {n} points with |z| > {ANOMALY_Z}");
    s
}

pub fn build_exploration_prompt(
    view: &TaskInstance,
    selection: &Selection,
    slots: &[SlotAssignment],
    tools: &[&ToolDescriptor],
) -> PromptBundle {
    PromptAssembler::default().exploration(view, selection, slots, tools)
}

pub fn build_branch_prompt(
    view: &TaskInstance,
    selection: &Selection,
    slot: &SlotAssignment,
    tools: &[&ToolDescriptor],
) -> PromptBundle {
    PromptAssembler::default().branch(view, selection, slot, tools)
}

pub fn build_inference_prompt(
    view: &TaskInstance,
    selection: &Selection,
    tools: &[&ToolDescriptor],
) -> Result<PromptBundle, PromptError> {
    PromptAssembler::default().inference(view, selection, tools)
}
