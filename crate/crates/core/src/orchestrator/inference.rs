//! Single-agent inference over task-facing tools, with a deterministic
//! fallback when no valid answer comes back.

use std::collections::BTreeMap;

use serde_json::{json, Value};

use super::answer::parse_answer;
use super::episode::{engine_result, invoke_traced, Agent, Events};
use super::trace::{Trace, TraceHeader, TraceKind, ENGINE_VERSION, MAIN_BRANCH, TRACE_FORMAT};
use super::EngineError;
use crate::gateway::{ChatBackend, ChatMessage, ChatParams, GatewayError, Usage};
use crate::model::{validate_answer, Answer, TaskInstance, TaskType};
use crate::prompt::PromptAssembler;
use crate::registry::Mode;
use crate::store::Selection;
use crate::toolkit::{analysis, forecast, ArtifactStore, InvocationContext, Toolkit};

#[derive(Debug, Clone)]
pub struct InferenceRun {
    pub prediction: Answer,
    /// True when the fallback answer replaced the agent's.
    pub degraded: bool,
    pub tool_chain: Vec<String>,
    /// Rule ids that were injected into the prompt.
    pub rules: Vec<u64>,
    pub execution_context: String,
    pub trace: Trace,
    pub usage: Usage,
}

fn nearest_label(labels: &[String], direction: &str) -> Option<String> {
    if labels.iter().any(|l| l == direction) {
        return Some(direction.to_string());
    }
    let keys: &[&str] = match direction {
        "increasing" => &["increas", "up", "rise", "positive"],
        "decreasing" => &["decreas", "down", "fall", "negative"],
        _ => &["stable", "neutral", "flat", "unchanged"],
    };
    keys.iter().find_map(|k| labels.iter().find(|l| l.to_lowercase().contains(k)).cloned())
}

/// Task-valid answer computed without any model: naive carry-forward for
/// forecasts, summary statistics for indicators, the fitted trend label
/// (or the alphabetically first label) for classification.
pub fn fallback_answer(instance: &TaskInstance) -> Answer {
    let last = instance.series.last().copied().unwrap_or(0.0);
    match instance.task_type {
        TaskType::Forecast => Answer::Numeric(
            forecast::naive(&instance.series, instance.horizon.max(1)).unwrap_or_else(|_| vec![last; instance.horizon.max(1)]),
        ),
        TaskType::Indicator => {
            let stats = analysis::basic_stats(&instance.series).ok();
            let mut f = stats.as_ref().map(|s| s.fields()).unwrap_or_default();
            if let Some(s) = &stats {
                f.insert("diff".into(), s.last - s.first);
            }
            let fields: BTreeMap<String, f64> =
                instance.indicator_fields.iter().map(|k| (k.clone(), f.get(k).copied().unwrap_or(0.0))).collect();
            Answer::Fields(fields)
        }
        _ => {
            let direction = analysis::detect_trend(&instance.series).map(|t| t.label).unwrap_or("stable");
            let labels = instance.label_space.clone().unwrap_or_default();
            let mut sorted = labels.clone();
            sorted.sort();
            Answer::Label(
                nearest_label(&labels, direction)
                    .or_else(|| sorted.into_iter().next())
                    .unwrap_or_else(|| direction.to_string()),
            )
        }
    }
}

/// Runs inference on `instance` with the retrieved `selection`. Ground
/// truth, if present, is dropped before anything else happens.
pub fn run_inference(
    toolkit: &Toolkit,
    gateway: &dyn ChatBackend,
    assembler: &PromptAssembler,
    instance: &TaskInstance,
    selection: &Selection,
    max_steps: usize,
    episode: &str,
) -> Result<InferenceRun, EngineError> {
    let view = instance.without_ground_truth();
    let registry = toolkit.registry();
    let tools = registry.visible(&view.scope, Mode::Inference);
    let bundle = assembler.inference(&view, selection, &tools)?;
    let rules: Vec<u64> = selection.rules.iter().map(|r| r.id).collect();
    let mut trace = Trace::new(TraceHeader {
        format: TRACE_FORMAT.into(),
        engine_version: ENGINE_VERSION.into(),
        config_digest: String::new(),
        mode: Mode::Inference,
        episode: episode.into(),
        instance: view.to_record(None),
        prior_exists: !rules.is_empty(),
        require_prior_and_alternative: false,
        min_valid_candidates: 1,
    });
    let params = ChatParams { max_steps, seed_tag: format!("{episode}/inference"), ..ChatParams::default() };
    let declared = bundle.tools.clone();
    let declared_ids: Vec<String> = declared.iter().map(|t| t.name.clone()).collect();
    let mut agent = Agent::new(MAIN_BRANCH, bundle.messages(), declared, params, gateway);
    let mut store = ArtifactStore::new(&view.series).with_prefix("i");
    let ctx = InvocationContext::inference(&view);
    let mut ev = Events::new();
    let mut chain = Vec::new();
    let mut final_text = None;

    for _ in 0..max_steps {
        let reply = match agent.ask(&mut ev) {
            Ok(r) => r,
            Err(e) if e.is_fatal() => return Err(e.into()),
            Err(GatewayError::Parse(m)) => {
                agent.messages.push(ChatMessage::user(format!("The previous reply could not be read ({m}). Reply again.")));
                continue;
            }
            Err(_) => break,
        };
        if !agent.accept(&reply) {
            continue;
        }
        let Some(call) = reply.tool_calls.first() else {
            final_text = Some(reply.content.clone());
            break;
        };
        let content = match call.parsed_arguments() {
            Ok(args) => {
                let (content, art) = invoke_traced(toolkit, &ctx, &mut store, MAIN_BRANCH, &call.id, &call.name, args, &mut ev);
                if art.is_some() {
                    chain.push(call.name.clone());
                }
                content
            }
            Err(e) => engine_result(MAIN_BRANCH, &call.id, &call.name, &Value::String(call.arguments.clone()), json!({"error": "bad_arguments", "message": e.to_string()}), &mut ev),
        };
        agent.messages.push(ChatMessage::tool(&call.id, content));
        agent.skip_extra_calls(&reply);
    }

    let parsed = final_text.as_deref().and_then(|t| parse_answer(t, view.task_type));
    let (prediction, degraded, reason) = match parsed {
        Some(a) => match validate_answer(&a, &view) {
            crate::model::Validity::Valid => (a, false, None),
            crate::model::Validity::Invalid(r) => (fallback_answer(&view), true, Some(r.code().to_string())),
        },
        None => (fallback_answer(&view), true, Some("missing_answer".to_string())),
    };
    for (branch, kind, payload) in ev {
        trace.push(&branch, kind, payload);
    }
    trace.push(
        MAIN_BRANCH,
        TraceKind::Outcome,
        json!({"prediction": &prediction, "degraded": degraded, "fallback_reason": reason, "rules": &rules}),
    );
    let rule_ids: Vec<String> = rules.iter().map(|r| format!("M{r}")).collect();
    let execution_context = format!(
        "mode=inference scope={} rules=[{}] tools=[{}] chain=[{}] degraded={}",
        view.scope,
        rule_ids.join(","),
        declared_ids.join(","),
        chain.join(","),
        degraded
    );
    Ok(InferenceRun { prediction, degraded, tool_chain: chain, rules, execution_context, trace, usage: agent.usage })
}
