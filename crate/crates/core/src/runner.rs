//! Run drivers: exploration over a corpus with the per-episode commit
//! point, inference over a corpus, and offline scoring of predictions.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::gateway::{ChatBackend, Usage};
use crate::metrics::{summarize, MetricReport, ScopeSummary, ScoredRow, SummaryPolicy};
use crate::model::{Answer, EvaluatorCapability, EvidenceClass, LearningSummary, TaskInstance};
use crate::orchestrator::{run_exploration_episode, run_inference, EngineError, ExplorationConfig, Explorer};
use crate::prompt::{fingerprint, PromptAssembler, DEFAULT_LAYER_CAP};
use crate::registry::{ToolUsageLedger, UNKNOWN_TOOL};
use crate::store::{summarize_episode, ExperienceStore, Selection, Stage};
use crate::toolkit::Toolkit;

pub const LEDGER_FILE: &str = "usage.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub exploration: ExplorationConfig,
    pub inference_max_steps: usize,
    pub layer_cap: usize,
    /// Bound on concurrently running scopes. Episodes within one scope
    /// always run in corpus order.
    pub parallel: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self { exploration: ExplorationConfig::default(), inference_max_steps: 6, layer_cap: DEFAULT_LAYER_CAP, parallel: 1 }
    }
}

impl RunConfig {
    pub fn digest(&self) -> String {
        let raw = serde_json::to_string(self).expect("config serializes");
        hex::encode(&<sha2::Sha256 as sha2::Digest>::digest(raw.as_bytes())[..8])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeReport {
    pub index: usize,
    pub instance_id: String,
    pub scope: String,
    pub episode: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evidence_class: Option<EvidenceClass>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verdict: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub winner: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note_seq: Option<u64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub stages: Vec<Stage>,
    /// Trace file name inside the trace directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<String>,
    pub usage: Usage,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub config_digest: String,
    pub config: RunConfig,
    pub gateway: String,
    pub episodes: usize,
    pub comparative: usize,
    pub single_execution: usize,
    pub failure: usize,
    pub failed_instances: usize,
    pub contract_pass: usize,
    pub violations: BTreeMap<String, usize>,
    pub notes_committed: usize,
    pub distillations: usize,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub episodes_detail: Vec<EpisodeReport>,
}

pub struct Engine<'a> {
    pub toolkit: &'a Toolkit,
    pub gateway: &'a dyn ChatBackend,
    pub store: &'a ExperienceStore,
    pub config: RunConfig,
    /// Directory receiving one JSONL trace per episode.
    pub trace_dir: Option<PathBuf>,
    ledger: Mutex<ToolUsageLedger>,
}

fn episode_name(index: usize, id: &str) -> String {
    let safe: String = id.chars().map(|c| if c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.') { c } else { '_' }).collect();
    format!("ep{index:05}-{safe}")
}

impl<'a> Engine<'a> {
    /// The usage ledger lives next to the store files when the store is on
    /// disk.
    pub fn new(toolkit: &'a Toolkit, gateway: &'a dyn ChatBackend, store: &'a ExperienceStore, config: RunConfig) -> Result<Self, EngineError> {
        let ledger = match store.root() {
            Some(root) => ToolUsageLedger::open(&root.join(LEDGER_FILE))?,
            None => ToolUsageLedger::new(),
        };
        Ok(Self { toolkit, gateway, store, config, trace_dir: None, ledger: Mutex::new(ledger) })
    }

    pub fn with_trace_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.trace_dir = Some(dir.into());
        self
    }

    pub fn ledger(&self) -> ToolUsageLedger {
        self.ledger.lock().expect("ledger").clone()
    }

    fn assembler(&self) -> PromptAssembler {
        PromptAssembler::new(self.config.layer_cap)
    }

    pub fn selection(&self, instance: &TaskInstance) -> Result<Selection, EngineError> {
        Ok(self.store.retrieve(&instance.scope, &fingerprint(&instance.without_ground_truth()))?)
    }

    /// One exploration episode and its commit: note, distillation trigger,
    /// usage ledger and history line, in that order.
    pub fn explore_one(&self, index: usize, instance: &TaskInstance) -> Result<EpisodeReport, EngineError> {
        let episode = episode_name(index, &instance.id);
        let selection = self.selection(instance)?;
        let ledger = self.ledger();
        let assembler = self.assembler();
        let ex = Explorer { toolkit: self.toolkit, gateway: self.gateway, assembler: &assembler, config: &self.config.exploration };
        let mut run = run_exploration_episode(&ex, instance, &selection, &ledger, &episode)?;

        let trace_path = match &self.trace_dir {
            Some(dir) => {
                let p = dir.join(format!("{episode}.jsonl"));
                run.trace.write(&p)?;
                Some(p.display().to_string())
            }
            None => None,
        };
        run.outcome.trace_path = trace_path.clone();
        let trace_ref = format!("{episode}.jsonl");
        run.note_context.trace_ref = Some(trace_ref.clone());
        let view = instance.without_ground_truth();
        let note = summarize_episode(&run.outcome, &view, &run.note_context);
        if run.outcome.learning_summary.source != "gateway" {
            run.outcome.learning_summary = LearningSummary {
                answer_type: "learning_summary".into(),
                insight: note.insight.clone(),
                recommendation: note.recommendation.clone(),
                source: "template".into(),
            };
        }
        let commit = self.store.commit_note(note)?;

        let (entropy, top5) = {
            let mut l = self.ledger.lock().expect("ledger");
            l.record_usage(self.toolkit.registry(), &instance.scope, &run.tools_used)?;
            (l.usage_entropy(&instance.scope), l.top_k_share(&instance.scope, 5))
        };
        self.store.append_history(
            &instance.scope,
            &json!({
                "episode": episode,
                "note_seq": commit.seq,
                "evidence_class": run.outcome.evidence_class,
                "verdict": run.verdict.label(),
                "tools": run.tools_used,
                "entropy": entropy,
                "top5_share": top5,
            }),
        )?;
        Ok(EpisodeReport {
            index,
            instance_id: instance.id.clone(),
            scope: instance.scope.clone(),
            episode,
            evidence_class: Some(run.outcome.evidence_class),
            verdict: Some(run.verdict.label()),
            winner: run.outcome.winner.clone(),
            note_seq: commit.seq,
            stages: commit.stages,
            trace: trace_path.map(|_| trace_ref),
            usage: run.usage,
            error: None,
        })
    }

    fn explore_group(&self, group: &[(usize, &TaskInstance)]) -> Vec<EpisodeReport> {
        group
            .iter()
            .map(|(i, inst)| {
                self.explore_one(*i, inst).unwrap_or_else(|e| {
                    tracing::warn!(instance = %inst.id, error = %e, "exploration episode failed");
                    EpisodeReport {
                        index: *i,
                        instance_id: inst.id.clone(),
                        scope: inst.scope.clone(),
                        episode: episode_name(*i, &inst.id),
                        evidence_class: None,
                        verdict: None,
                        winner: None,
                        note_seq: None,
                        stages: Vec::new(),
                        trace: None,
                        usage: Usage::default(),
                        error: Some(e.to_string()),
                    }
                })
            })
            .collect()
    }

    /// Explores every instance, then flushes pending notes in each scope.
    pub fn explore(&self, instances: &[TaskInstance]) -> Result<RunSummary, EngineError> {
        if let Some(bad) = instances.iter().find(|i| !i.has_ground_truth()) {
            return Err(EngineError::Invalid(format!("exploration requires targets (instance {} has none)", bad.id)));
        }
        let mut groups: BTreeMap<&str, Vec<(usize, &TaskInstance)>> = BTreeMap::new();
        for (i, inst) in instances.iter().enumerate() {
            groups.entry(inst.scope.as_str()).or_default().push((i, inst));
        }
        let groups: Vec<Vec<(usize, &TaskInstance)>> = groups.into_values().collect();
        let workers = self.config.parallel.max(1).min(groups.len().max(1));
        let mut reports: Vec<EpisodeReport> = if workers <= 1 {
            groups.iter().flat_map(|g| self.explore_group(g)).collect()
        } else {
            let queue = Mutex::new(groups.iter().collect::<Vec<_>>());
            std::thread::scope(|s| {
                let handles: Vec<_> = (0..workers)
                    .map(|_| {
                        s.spawn(|| {
                            let mut out = Vec::new();
                            loop {
                                let next = queue.lock().expect("queue").pop();
                                match next {
                                    Some(g) => out.extend(self.explore_group(g)),
                                    None => break out,
                                }
                            }
                        })
                    })
                    .collect();
                handles.into_iter().flat_map(|h| h.join().expect("worker panicked")).collect()
            })
        };
        reports.sort_by_key(|r| r.index);
        let flushed = self.store.finalize_all()?;

        let count = |c: EvidenceClass| reports.iter().filter(|r| r.evidence_class == Some(c)).count();
        let mut violations = BTreeMap::new();
        for r in &reports {
            if let Some(v) = r.verdict.as_deref().filter(|v| *v != "pass") {
                for code in v.split(',') {
                    *violations.entry(code.to_string()).or_insert(0) += 1;
                }
            }
        }
        Ok(RunSummary {
            seed: self.config.exploration.seed,
            config_digest: self.config.digest(),
            config: self.config.clone(),
            gateway: self.gateway.name().to_string(),
            episodes: reports.len(),
            comparative: count(EvidenceClass::Comparative),
            single_execution: count(EvidenceClass::SingleExecution),
            failure: count(EvidenceClass::Failure),
            failed_instances: reports.iter().filter(|r| r.error.is_some()).count(),
            contract_pass: reports.iter().filter(|r| r.verdict.as_deref() == Some("pass")).count(),
            violations,
            notes_committed: reports.iter().filter(|r| r.note_seq.is_some()).count(),
            distillations: reports.iter().filter(|r| !r.stages.is_empty()).count()
                + flushed.values().filter(|s| !s.is_empty()).count(),
            prompt_tokens: reports.iter().map(|r| r.usage.prompt_tokens).sum(),
            completion_tokens: reports.iter().map(|r| r.usage.completion_tokens).sum(),
            episodes_detail: reports,
        })
    }

    /// Inference over every instance. The store is only read.
    pub fn infer(&self, instances: &[TaskInstance]) -> Result<Vec<PredictionRecord>, EngineError> {
        let assembler = self.assembler();
        let mut out = Vec::with_capacity(instances.len());
        for (i, inst) in instances.iter().enumerate() {
            let view = inst.without_ground_truth();
            let selection = self.selection(&view)?;
            let episode = format!("inf{i:05}-{}", episode_name(i, &inst.id).split_once('-').map(|x| x.1).unwrap_or(""));
            let run = run_inference(self.toolkit, self.gateway, &assembler, &view, &selection, self.config.inference_max_steps, &episode)?;
            if let Some(dir) = &self.trace_dir {
                run.trace.write(&dir.join(format!("{episode}.jsonl")))?;
            }
            out.push(PredictionRecord {
                id: inst.id.clone(),
                scope: inst.scope.clone(),
                prediction: run.prediction,
                tool_chain: run.tool_chain,
                execution_context: run.execution_context,
                degraded: run.degraded,
                rules: run.rules,
            });
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub id: String,
    pub scope: String,
    pub prediction: Answer,
    pub tool_chain: Vec<String>,
    pub execution_context: String,
    pub degraded: bool,
    #[serde(default)]
    pub rules: Vec<u64>,
}

pub fn render_predictions(records: &[PredictionRecord]) -> String {
    records.iter().map(|r| serde_json::to_string(r).expect("record serializes") + "\n").collect()
}

pub fn parse_predictions(raw: &str) -> Result<Vec<PredictionRecord>, String> {
    raw.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| format!("line {}: {e}", i + 1)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub scopes: Vec<ScopeSummary>,
    /// Prediction ids absent from the corpus.
    pub unknown_ids: Vec<String>,
    /// Corpus ids without a prediction.
    pub missing: Vec<String>,
}

/// Scores predictions against corpus ground truth, per scope. `thresholds`
/// maps scope keys to the exclusion threshold on the supervision metric.
pub fn score_predictions(
    predictions: &[PredictionRecord],
    corpus: &[TaskInstance],
    thresholds: &BTreeMap<String, f64>,
) -> ScoreReport {
    let cap = EvaluatorCapability::offline_scorer();
    let by_id: BTreeMap<&str, &TaskInstance> = corpus.iter().map(|i| (i.id.as_str(), i)).collect();
    let mut rows: BTreeMap<String, Vec<ScoredRow>> = BTreeMap::new();
    let mut metric = BTreeMap::new();
    let mut unknown_ids = Vec::new();
    let mut seen = BTreeSet::new();
    for p in predictions {
        let Some(inst) = by_id.get(p.id.as_str()) else {
            unknown_ids.push(p.id.clone());
            rows.entry(p.scope.clone()).or_default().push(ScoredRow::Unscorable { id: p.id.clone(), reason: "id not in corpus".into() });
            continue;
        };
        seen.insert(p.id.as_str());
        metric.entry(inst.scope.clone()).or_insert(inst.supervision_metric());
        let row = match inst.ground_truth(&cap) {
            Err(e) => ScoredRow::Unscorable { id: p.id.clone(), reason: e.to_string() },
            Ok(truth) => match MetricReport::evaluate(&p.prediction, truth) {
                Ok(report) => ScoredRow::Scored { id: p.id.clone(), report },
                Err(e) => ScoredRow::Unscorable { id: p.id.clone(), reason: e.to_string() },
            },
        };
        rows.entry(inst.scope.clone()).or_default().push(row);
    }
    let missing = corpus.iter().filter(|i| !seen.contains(i.id.as_str())).map(|i| i.id.clone()).collect();
    let scopes = rows
        .iter()
        .map(|(scope, r)| {
            let m = metric.get(scope).copied().unwrap_or(crate::metrics::SupervisionMetric::Mae);
            let mut policy = SummaryPolicy::new(m);
            if let Some(t) = thresholds.get(scope) {
                policy = policy.with_threshold(*t);
            }
            summarize(scope, r, &policy)
        })
        .collect();
    ScoreReport { scopes, unknown_ids, missing }
}

/// Ledger counts excluding the unknown-tool bucket, for reports.
pub fn known_counts(ledger: &ToolUsageLedger, scope: &str) -> BTreeMap<String, u64> {
    ledger
        .scope_counts(scope)
        .map(|m| m.iter().filter(|(k, _)| k.as_str() != UNKNOWN_TOOL).map(|(k, v)| (k.clone(), *v)).collect())
        .unwrap_or_default()
}

pub fn read_ledger(store_root: &Path) -> Result<ToolUsageLedger, EngineError> {
    Ok(ToolUsageLedger::open(&store_root.join(LEDGER_FILE))?)
}

pub fn summary_value(summary: &RunSummary) -> Value {
    serde_json::to_value(summary).expect("summary serializes")
}
