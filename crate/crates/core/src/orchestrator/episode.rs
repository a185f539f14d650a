//! One exploration episode: the main agent spawns branches, scores their
//! answers with the evaluator and closes with a learning summary.

use std::collections::{BTreeMap, BTreeSet};

use serde_json::{json, Value};

use super::answer::{parse_answer, parse_summary};
use super::contract::{enforce_exploration_contract, BranchSummary, ContractVerdict};
use super::slots::{assign_branch_slots, prior_tool, SlotAssignment};
use super::trace::{Trace, TraceHeader, TraceKind, ENGINE_VERSION, MAIN_BRANCH, TRACE_FORMAT};
use super::{EngineError, ExplorationConfig};
use crate::gateway::{
    estimate_usage, exchange_digest, AssistantMessage, ChatBackend, ChatExchange, ChatMessage, ChatParams, GatewayError, ToolSchema,
    Usage,
};
use crate::metrics::MetricReport;
use crate::model::{
    classify_evidence, execution_quality, select_winner, validate_answer, CandidateExecution, EpisodeOutcome,
    EvaluatorCapability, LearningSummary, TaskInstance, ToolArtifact, ToolCallRecord, Validity,
};
use crate::prompt::{tool_schema, PromptAssembler};
use crate::registry::{Mode, ToolUsageLedger};
use crate::store::{NoteContext, Selection};
use crate::toolkit::{ArtifactStore, InvocationContext, ToolInvocation, Toolkit, EVALUATE, EVALUATE_BATCH, SPAWN};

pub(super) type Events = Vec<(String, TraceKind, Value)>;

/// Everything an exploration episode needs besides the instance.
pub struct Explorer<'a> {
    pub toolkit: &'a Toolkit,
    pub gateway: &'a dyn ChatBackend,
    pub assembler: &'a PromptAssembler,
    pub config: &'a ExplorationConfig,
}

#[derive(Debug, Clone)]
pub struct EpisodeRun {
    pub outcome: EpisodeOutcome,
    pub verdict: ContractVerdict,
    pub trace: Trace,
    pub slots: Vec<SlotAssignment>,
    /// Substantive tool ids invoked by branches, in call order.
    pub tools_used: Vec<String>,
    pub note_context: NoteContext,
    pub usage: Usage,
    pub prior_exists: bool,
}

/// A conversation with one agent, traced turn by turn.
pub(super) struct Agent<'g> {
    pub branch: String,
    pub messages: Vec<ChatMessage>,
    pub tools: Vec<ToolSchema>,
    pub params: ChatParams,
    pub gateway: &'g dyn ChatBackend,
    pub usage: Usage,
    sent: usize,
}

impl<'g> Agent<'g> {
    pub fn new(branch: &str, messages: Vec<ChatMessage>, tools: Vec<ToolSchema>, params: ChatParams, gateway: &'g dyn ChatBackend) -> Self {
        Self { branch: branch.into(), messages, tools, params, gateway, usage: Usage::default(), sent: 0 }
    }

    pub fn ask(&mut self, ev: &mut Events) -> Result<AssistantMessage, GatewayError> {
        let ex = ChatExchange { messages: self.messages.clone(), declared_tools: self.tools.clone(), params: self.params.clone() };
        ex.validate()?;
        let digest = exchange_digest(&ex);
        let mut req = json!({"digest": digest, "messages": &self.messages[self.sent..]});
        if self.sent == 0 {
            req["tools"] = json!(self.tools.iter().map(|t| &t.name).collect::<Vec<_>>());
        }
        self.sent = self.messages.len();
        ev.push((self.branch.clone(), TraceKind::GatewayRequest, req));
        match self.gateway.complete(&ex) {
            Ok(mut reply) => {
                if reply.usage.total() == 0 {
                    reply.usage = estimate_usage(&ex, &reply);
                }
                self.usage.prompt_tokens += reply.usage.prompt_tokens;
                self.usage.completion_tokens += reply.usage.completion_tokens;
                ev.push((
                    self.branch.clone(),
                    TraceKind::GatewayResponse,
                    json!({"digest": digest, "message": &reply, "usage": reply.usage}),
                ));
                Ok(reply)
            }
            Err(e) => {
                ev.push((self.branch.clone(), TraceKind::GatewayResponse, json!({"digest": digest, "error": e.to_string()})));
                Err(e)
            }
        }
    }

    /// Appends the reply to the conversation. Returns false when it asked
    /// for tools this agent was not given; the reply is then kept as text
    /// and the agent is told which tools exist.
    pub fn accept(&mut self, reply: &AssistantMessage) -> bool {
        let undeclared: Vec<&str> = reply
            .tool_calls
            .iter()
            .filter(|c| !self.tools.iter().any(|t| t.name == c.name))
            .map(|c| c.name.as_str())
            .collect();
        if undeclared.is_empty() {
            self.messages.push(ChatMessage::assistant(reply));
            return true;
        }
        let mut text = reply.content.clone();
        for c in &reply.tool_calls {
            text.push_str(&format!("\n[requested {}({})]", c.name, c.arguments));
        }
        self.messages.push(ChatMessage { content: text.trim().to_string(), ..ChatMessage::assistant(&AssistantMessage::default()) });
        let names: Vec<&str> = self.tools.iter().map(|t| t.name.as_str()).collect();
        self.messages.push(ChatMessage::user(format!(
            "tool_not_visible: {} is not available here. Available tools: {}.",
            undeclared.join(", "),
            names.join(", ")
        )));
        false
    }

    /// Answers every call after the first with a skip notice.
    pub fn skip_extra_calls(&mut self, reply: &AssistantMessage) {
        for c in reply.tool_calls.iter().skip(1) {
            self.messages.push(ChatMessage::tool(&c.id, "skipped: one tool call is executed per turn"));
        }
    }
}

/// Invokes a tool and traces the call and its artifact.
pub(super) fn invoke_traced(
    kit: &Toolkit,
    ctx: &InvocationContext,
    store: &mut ArtifactStore,
    branch: &str,
    call_id: &str,
    tool: &str,
    args: Value,
    ev: &mut Events,
) -> (String, Option<ToolArtifact>) {
    ev.push((branch.into(), TraceKind::ToolCall, json!({"call_id": call_id, "tool": tool, "args": &args})));
    match kit.invoke(&ToolInvocation::new(tool, args), ctx, store) {
        Ok(art) => {
            let content = serde_json::to_string(&art).expect("artifact serializes");
            ev.push((branch.into(), TraceKind::ToolResult, json!({"call_id": call_id, "tool": tool, "artifact": &art})));
            (content, Some(art))
        }
        Err(e) => {
            let body = json!({"error": "capability", "message": e.to_string()});
            ev.push((branch.into(), TraceKind::ToolResult, json!({"call_id": call_id, "tool": tool, "engine": &body})));
            (body.to_string(), None)
        }
    }
}

pub(super) fn engine_result(branch: &str, call_id: &str, tool: &str, args: &Value, body: Value, ev: &mut Events) -> String {
    ev.push((branch.into(), TraceKind::ToolCall, json!({"call_id": call_id, "tool": tool, "args": args})));
    let content = body.to_string();
    ev.push((branch.into(), TraceKind::ToolResult, json!({"call_id": call_id, "tool": tool, "engine": body})));
    content
}

struct BranchResult {
    candidate: CandidateExecution,
    hint: String,
    error_tools: Vec<String>,
    events: Events,
    usage: Usage,
}

fn run_branch(ex: &Explorer, view: &TaskInstance, selection: &Selection, slot: &SlotAssignment, episode: &str) -> Result<BranchResult, EngineError> {
    let id = slot.branch_id();
    let registry = ex.toolkit.registry();
    let tools: Vec<_> = registry
        .visible(&view.scope, Mode::Exploration)
        .into_iter()
        .filter(|d| slot.visible.contains(&d.tool_id))
        .collect();
    let bundle = ex.assembler.branch(view, selection, slot, &tools);
    let params = ChatParams { max_steps: ex.config.max_steps, seed_tag: format!("{episode}/{id}"), ..ChatParams::default() };
    let mut agent = Agent::new(&id, bundle.messages(), bundle.tools.clone(), params, ex.gateway);
    let mut store = ArtifactStore::new(&view.series).with_prefix(&id);
    let ctx = InvocationContext::exploration(view, None);
    let mut ev = Events::new();
    let mut calls = Vec::new();
    let mut error_tools = Vec::new();
    let mut final_text: Option<String> = None;
    let mut failed = false;

    for _ in 0..ex.config.max_steps {
        let reply = match agent.ask(&mut ev) {
            Ok(r) => r,
            Err(e) if e.is_fatal() => return Err(e.into()),
            Err(GatewayError::Parse(m)) => {
                agent.messages.push(ChatMessage::user(format!("The previous reply could not be read ({m}). Reply again.")));
                continue;
            }
            Err(_) => {
                failed = true;
                break;
            }
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
                let (content, art) = invoke_traced(ex.toolkit, &ctx, &mut store, &id, &call.id, &call.name, args.clone(), &mut ev);
                if let Some(a) = art {
                    if a.payload.is_error() {
                        error_tools.push(call.name.clone());
                    }
                    calls.push(ToolCallRecord { tool_id: call.name.clone(), args, artifact_id: a.artifact_id });
                }
                content
            }
            Err(e) => engine_result(&id, &call.id, &call.name, &Value::String(call.arguments.clone()), json!({"error": "bad_arguments", "message": e.to_string()}), &mut ev),
        };
        agent.messages.push(ChatMessage::tool(&call.id, content));
        agent.skip_extra_calls(&reply);
    }

    let answer = final_text.as_deref().and_then(|t| parse_answer(t, view.task_type));
    let (valid, invalid_reason) = match &answer {
        _ if failed => (false, None),
        None => (false, Some(crate::model::InvalidReason::MissingAnswer)),
        Some(a) => match validate_answer(a, view) {
            Validity::Valid => (true, None),
            Validity::Invalid(r) => (false, Some(r)),
        },
    };
    Ok(BranchResult {
        candidate: CandidateExecution {
            branch_id: id,
            slot: slot.slot,
            role: slot.role,
            tool_calls: calls,
            final_answer: answer,
            valid,
            invalid_reason,
            quality: None,
            reasoning_text: final_text.unwrap_or_default(),
            failed,
        },
        hint: slot.hint.clone(),
        error_tools,
        events: ev,
        usage: agent.usage,
    })
}

fn launch(ex: &Explorer, view: &TaskInstance, selection: &Selection, slots: &[SlotAssignment], episode: &str) -> Result<Vec<BranchResult>, EngineError> {
    if ex.config.parallel_branches && slots.len() > 1 {
        std::thread::scope(|s| {
            let handles: Vec<_> = slots.iter().map(|slot| s.spawn(move || run_branch(ex, view, selection, slot, episode))).collect();
            handles.into_iter().map(|h| h.join().expect("branch thread panicked")).collect()
        })
    } else {
        slots.iter().map(|slot| run_branch(ex, view, selection, slot, episode)).collect()
    }
}

fn summary_of(b: &BranchResult) -> BranchSummary {
    let c = &b.candidate;
    BranchSummary {
        branch_id: c.branch_id.clone(),
        slot: c.slot,
        role: c.role,
        hint: b.hint.clone(),
        valid: c.valid,
        answer: c.final_answer.clone(),
        tool_chain: c.tool_chain(),
        invalid_reason: c.invalid_reason.as_ref().map(|r| r.code().to_string()),
        failed: c.failed,
    }
}

/// Fills evaluator arguments the main agent left out with the branch
/// answers it was shown.
fn autofill_evaluate(tool: &str, mut args: Value, branches: &[BranchResult]) -> Value {
    let answer_of = |cand: &str| {
        branches
            .iter()
            .find(|b| b.candidate.branch_id == cand)
            .and_then(|b| b.candidate.final_answer.as_ref())
            .map(|a| serde_json::to_value(a).expect("answer serializes"))
    };
    if tool == EVALUATE {
        if args.get("answer").is_none_or(Value::is_null) {
            if let Some(a) = args.get("candidate").and_then(Value::as_str).and_then(answer_of) {
                args["answer"] = a;
            }
        }
        return args;
    }
    let listed = args.get("answers").and_then(Value::as_array).cloned().unwrap_or_default();
    let items: Vec<Value> = if listed.is_empty() {
        branches
            .iter()
            .filter(|b| b.candidate.valid)
            .filter_map(|b| Some(json!({"candidate": b.candidate.branch_id, "answer": answer_of(&b.candidate.branch_id)?})))
            .collect()
    } else {
        listed
            .into_iter()
            .map(|mut item| {
                if item.get("answer").is_none_or(Value::is_null) {
                    if let Some(a) = item.get("candidate").and_then(Value::as_str).and_then(answer_of) {
                        item["answer"] = a;
                    }
                }
                item
            })
            .collect()
    };
    if let Value::Object(m) = &mut args {
        m.insert("answers".into(), Value::Array(items));
    }
    args
}

/// Runs one exploration episode over `instance`, which must carry ground
/// truth. Branches and prompts only see the instance without it.
pub fn run_exploration_episode(
    ex: &Explorer,
    instance: &TaskInstance,
    selection: &Selection,
    ledger: &ToolUsageLedger,
    episode: &str,
) -> Result<EpisodeRun, EngineError> {
    let cfg = ex.config;
    let cap = EvaluatorCapability::exploration();
    instance.ground_truth(&cap).map_err(|e| EngineError::Invalid(format!("exploration needs ground truth: {e}")))?;
    let view = instance.without_ground_truth();
    let registry = ex.toolkit.registry();
    let prior = prior_tool(registry, &view, selection);
    let seed = cfg.episode_seed(&instance.id);
    let slots = assign_branch_slots(registry, ledger, &view, prior.as_deref(), cfg, seed)?;
    let prior_exists = prior.is_some();

    let mut trace = Trace::new(TraceHeader {
        format: TRACE_FORMAT.into(),
        engine_version: ENGINE_VERSION.into(),
        config_digest: cfg.digest(),
        mode: Mode::Exploration,
        episode: episode.into(),
        instance: view.to_record(None),
        prior_exists,
        require_prior_and_alternative: cfg.require_prior_and_alternative,
        min_valid_candidates: cfg.min_valid_candidates,
    });

    let main_tools: Vec<_> = registry.visible(&view.scope, Mode::Exploration);
    let bundle = ex.assembler.exploration(&view, selection, &slots, &main_tools);
    let prompt_digest = hex::encode(&sha2::Sha256::digest(format!("{}\n{}", bundle.system, bundle.user).as_bytes())[..8]);
    let params = ChatParams { max_steps: cfg.main_max_steps, seed_tag: format!("{episode}/main"), ..ChatParams::default() };
    let mut main = Agent::new(MAIN_BRANCH, bundle.messages(), main_tools.iter().map(|d| tool_schema(d)).collect(), params, ex.gateway);
    let mut store = ArtifactStore::new(&view.series).with_prefix("m");
    let ctx = InvocationContext::exploration(instance, Some(cap));
    let mut ev = Events::new();
    let mut branches: Vec<BranchResult> = Vec::new();
    let mut spawn_rounds = 0;
    let mut usage = Usage::default();
    let mut metric_values: BTreeMap<String, f64> = BTreeMap::new();
    let mut covered: BTreeSet<String> = BTreeSet::new();
    let mut final_text: Option<String> = None;
    let metric = instance.supervision_metric();

    for _ in 0..cfg.main_max_steps {
        let reply = match main.ask(&mut ev) {
            Ok(r) => r,
            Err(e) if e.is_fatal() => return Err(e.into()),
            Err(GatewayError::Parse(m)) => {
                main.messages.push(ChatMessage::user(format!("The previous reply could not be read ({m}). Reply again.")));
                continue;
            }
            Err(_) => break,
        };
        if !main.accept(&reply) {
            continue;
        }
        let Some(call) = reply.tool_calls.first().cloned() else {
            final_text = Some(reply.content.clone());
            break;
        };
        let args = match call.parsed_arguments() {
            Ok(a) => a,
            Err(e) => {
                let c = engine_result(MAIN_BRANCH, &call.id, &call.name, &Value::String(call.arguments.clone()), json!({"error": "bad_arguments", "message": e.to_string()}), &mut ev);
                main.messages.push(ChatMessage::tool(&call.id, c));
                main.skip_extra_calls(&reply);
                continue;
            }
        };
        let content = if call.name == SPAWN {
            if spawn_rounds >= cfg.spawn_rounds {
                engine_result(MAIN_BRANCH, &call.id, SPAWN, &args, json!({"error": "spawn_budget_exhausted", "branches": branches.iter().map(summary_of).collect::<Vec<_>>()}), &mut ev)
            } else {
                spawn_rounds += 1;
                ev.push((MAIN_BRANCH.into(), TraceKind::ToolCall, json!({"call_id": call.id, "tool": SPAWN, "args": &args})));
                let results = launch(ex, &view, selection, &slots, episode)?;
                for r in &results {
                    ev.extend(r.events.iter().cloned());
                    usage.prompt_tokens += r.usage.prompt_tokens;
                    usage.completion_tokens += r.usage.completion_tokens;
                }
                branches = results;
                let body = json!({"branches": branches.iter().map(summary_of).collect::<Vec<_>>()});
                ev.push((MAIN_BRANCH.into(), TraceKind::ToolResult, json!({"call_id": call.id, "tool": SPAWN, "engine": &body})));
                body.to_string()
            }
        } else {
            let args = if call.name == EVALUATE || call.name == EVALUATE_BATCH { autofill_evaluate(&call.name, args, &branches) } else { args };
            let (content, art) = invoke_traced(ex.toolkit, &ctx, &mut store, MAIN_BRANCH, &call.id, &call.name, args, &mut ev);
            if let Some(crate::model::Payload::MetricReport { reports }) = art.map(|a| a.payload) {
                for r in reports {
                    if let Some(rep) = r.report.as_ref() {
                        covered.insert(r.candidate.clone());
                        if let Some(v) = MetricReport::value(rep, metric) {
                            metric_values.insert(r.candidate.clone(), v);
                        }
                    }
                }
            }
            content
        };
        main.messages.push(ChatMessage::tool(&call.id, content));
        main.skip_extra_calls(&reply);
    }
    usage.prompt_tokens += main.usage.prompt_tokens;
    usage.completion_tokens += main.usage.completion_tokens;

    let mut candidates: Vec<CandidateExecution> = Vec::with_capacity(branches.len());
    let mut error_tools = BTreeMap::new();
    let mut tools_used = Vec::new();
    for b in &branches {
        let mut c = b.candidate.clone();
        if c.valid && covered.contains(&c.branch_id) {
            c.quality = execution_quality(&c, instance, &cap).ok();
        }
        if !b.error_tools.is_empty() {
            error_tools.insert(c.branch_id.clone(), b.error_tools.clone());
        }
        tools_used.extend(c.tool_chain());
        candidates.push(c);
    }
    let evidence_class = classify_evidence(&candidates);
    let winner = select_winner(&candidates).map(|c| c.branch_id.clone());
    let learning_summary = final_text
        .as_deref()
        .and_then(parse_summary)
        .unwrap_or(LearningSummary { source: "none".into(), ..LearningSummary::default() });

    for (branch, kind, payload) in ev {
        trace.push(&branch, kind, payload);
    }
    let verdict = enforce_exploration_contract(&trace);
    trace.push(MAIN_BRANCH, TraceKind::Verdict, json!({"pass": verdict.pass(), "violations": verdict.codes()}));
    trace.push(
        MAIN_BRANCH,
        TraceKind::Outcome,
        json!({"winner": winner, "evidence_class": evidence_class, "evaluated": !covered.is_empty(), "usage": usage}),
    );
    if !verdict.pass() {
        tracing::warn!(episode, violations = %verdict.label(), "exploration contract violated");
    }

    Ok(EpisodeRun {
        outcome: EpisodeOutcome {
            instance_id: instance.id.clone(),
            candidates,
            winner,
            evidence_class,
            learning_summary,
            trace_path: None,
        },
        verdict,
        trace,
        slots,
        tools_used,
        note_context: NoteContext {
            prompt_digest,
            metric_values,
            error_tools,
            evaluated: !covered.is_empty(),
            trace_ref: None,
        },
        usage,
        prior_exists,
    })
}

use sha2::Digest as _;
