//! Learning notes, their cleaning, and the rule drafts they yield.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::rules::{RuleDraft, RuleKind};
use crate::model::{BranchRole, EpisodeOutcome, EvidenceClass, TaskInstance};
use crate::prompt::{fingerprint, Applicability};
use crate::toolkit::{EVALUATE, EVALUATE_BATCH, SPAWN};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoteCandidate {
    pub branch_id: String,
    pub slot: usize,
    pub role: BranchRole,
    pub tool_chain: Vec<String>,
    pub valid: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quality: Option<f64>,
    /// Supervision metric value reported by the evaluator.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metric_value: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub error_tools: Vec<String>,
}

/// Append-only episode record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearningNote {
    /// Position within the scope, assigned at commit (0 before).
    pub seq: u64,
    pub scope: String,
    pub instance_id: String,
    pub prompt_digest: String,
    pub evidence_class: EvidenceClass,
    pub applicability: Applicability,
    pub metric: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub winner: Option<String>,
    pub winner_chain: Vec<String>,
    pub candidates: Vec<NoteCandidate>,
    pub insight: String,
    pub recommendation: String,
    pub summary_source: String,
    /// Whether the trace holds at least one evaluator result.
    pub evaluated: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace_ref: Option<String>,
}

/// Episode details the outcome itself does not carry.
#[derive(Debug, Clone, Default)]
pub struct NoteContext {
    pub prompt_digest: String,
    pub metric_values: BTreeMap<String, f64>,
    pub error_tools: BTreeMap<String, Vec<String>>,
    pub evaluated: bool,
    pub trace_ref: Option<String>,
}

fn chain_text(chain: &[String]) -> String {
    if chain.is_empty() {
        "no tool".into()
    } else {
        chain.join(" -> ")
    }
}

/// The deterministic summary used whenever the gateway did not provide a
/// well-formed one.
pub fn template_summary(outcome: &EpisodeOutcome, metric: &str, values: &BTreeMap<String, f64>, chi: &Applicability) -> (String, String) {
    let winner = outcome.winner_candidate();
    let score = |id: &str| values.get(id).map(|v| format!("{metric} {v:.3}")).unwrap_or_else(|| format!("{metric} n/a"));
    match (outcome.evidence_class, winner) {
        (EvidenceClass::Comparative, Some(w)) => {
            let wc = w.tool_chain();
            let others: Vec<String> = outcome
                .candidates
                .iter()
                .filter(|c| c.branch_id != w.branch_id && c.valid && c.quality.is_some())
                .map(|c| format!("{} at {}", chain_text(&c.tool_chain()), score(&c.branch_id)))
                .collect();
            let losers: BTreeSet<String> = outcome
                .candidates
                .iter()
                .filter(|c| c.branch_id != w.branch_id && c.valid && c.quality.is_some())
                .flat_map(|c| c.tool_chain())
                .filter(|t| !wc.contains(t))
                .collect();
            let insight = format!(
                "{} reached {} against {}; the lower-error path was {}.",
                chain_text(&wc),
                score(&w.branch_id),
                others.join(", "),
                chain_text(&wc)
            );
            let rec = if losers.is_empty() {
                format!("Use {} when {}.", chain_text(&wc), chi.describe())
            } else {
                format!(
                    "Prefer {} over {} when {}.",
                    chain_text(&wc),
                    losers.into_iter().collect::<Vec<_>>().join(", "),
                    chi.describe()
                )
            };
            (insight, rec)
        }
        (EvidenceClass::SingleExecution, Some(w)) => (
            format!(
                "Only {} produced a valid answer ({}); no comparison was possible.",
                chain_text(&w.tool_chain()),
                score(&w.branch_id)
            ),
            format!("Keep {} as a working option when {}.", chain_text(&w.tool_chain()), chi.describe()),
        ),
        _ => (
            "No branch produced a scorable answer.".into(),
            "Check tool preconditions before committing to a strategy.".into(),
        ),
    }
}

/// Builds the note for one finalized episode. Gateway-provided summary text
/// is used when the outcome carries it; otherwise the template fills in.
pub fn summarize_episode(outcome: &EpisodeOutcome, instance: &TaskInstance, ctx: &NoteContext) -> LearningNote {
    let fp = fingerprint(instance);
    let chi = Applicability::derive(&fp);
    let metric = instance.supervision_metric().key().to_string();
    let (insight, recommendation, source) = if outcome.learning_summary.source == "gateway"
        && !outcome.learning_summary.insight.trim().is_empty()
    {
        (outcome.learning_summary.insight.clone(), outcome.learning_summary.recommendation.clone(), "gateway")
    } else {
        let (i, r) = template_summary(outcome, &metric, &ctx.metric_values, &chi);
        (i, r, "template")
    };
    LearningNote {
        seq: 0,
        scope: instance.scope.clone(),
        instance_id: instance.id.clone(),
        prompt_digest: ctx.prompt_digest.clone(),
        evidence_class: outcome.evidence_class,
        applicability: chi,
        metric,
        winner: outcome.winner.clone(),
        winner_chain: outcome.winner_candidate().map(|w| w.tool_chain()).unwrap_or_default(),
        candidates: outcome
            .candidates
            .iter()
            .map(|c| NoteCandidate {
                branch_id: c.branch_id.clone(),
                slot: c.slot,
                role: c.role,
                tool_chain: c.tool_chain(),
                valid: c.valid,
                quality: c.quality,
                metric_value: ctx.metric_values.get(&c.branch_id).copied(),
                error_tools: ctx.error_tools.get(&c.branch_id).cloned().unwrap_or_default(),
            })
            .collect(),
        insight,
        recommendation,
        summary_source: source.into(),
        evaluated: ctx.evaluated,
        trace_ref: ctx.trace_ref.clone(),
    }
}

/// A note after cleaning: transferable text plus the structured comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CleanEvidence {
    pub scope: String,
    pub seq: u64,
    pub evidence_class: EvidenceClass,
    pub applicability: Applicability,
    pub winner_chain: Vec<String>,
    pub loser_chains: Vec<Vec<String>>,
    pub error_tools: BTreeSet<String>,
    pub insight: String,
    pub recommendation: String,
}

pub trait Clean {
    fn clean(&self) -> CleanEvidence;
}

impl Clean for LearningNote {
    fn clean(&self) -> CleanEvidence {
        let scrub = |s: &str| clean_text(&s.replace(&self.instance_id, "<instance>"));
        let losers = self
            .candidates
            .iter()
            .filter(|c| Some(&c.branch_id) != self.winner.as_ref() && c.valid && c.quality.is_some())
            .map(|c| c.tool_chain.clone())
            .collect();
        CleanEvidence {
            scope: self.scope.clone(),
            seq: self.seq,
            evidence_class: self.evidence_class,
            applicability: self.applicability.clone(),
            winner_chain: self.winner_chain.clone(),
            loser_chains: losers,
            error_tools: self.candidates.iter().flat_map(|c| c.error_tools.iter().cloned()).collect(),
            insight: scrub(&self.insight),
            recommendation: scrub(&self.recommendation),
        }
    }
}

impl Clean for CleanEvidence {
    fn clean(&self) -> CleanEvidence {
        CleanEvidence { insight: clean_text(&self.insight), recommendation: clean_text(&self.recommendation), ..self.clone() }
    }
}

pub fn clean(x: &impl Clean) -> CleanEvidence {
    x.clean()
}

struct Patterns {
    array: Regex,
    keyed: Regex,
    control: Regex,
    slot: Regex,
    branch: Regex,
    space: Regex,
    punct: Regex,
}

fn patterns() -> &'static Patterns {
    static P: OnceLock<Patterns> = OnceLock::new();
    P.get_or_init(|| {
        let n = r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?";
        Patterns {
            array: Regex::new(&format!(r"\[\s*{n}(?:\s*,\s*{n})*\s*,?\s*\]")).unwrap(),
            keyed: Regex::new(r#"(?i)\b(ground[_ ]truth|answer|target)\s*(=|:)\s*("[^"]*"|'[^']*'|\[[^\]]*\]|[^\s,;]+)"#).unwrap(),
            control: Regex::new(&format!(
                r"\b({}|{}|{}|learning_summary)\b",
                regex::escape(EVALUATE_BATCH),
                regex::escape(EVALUATE),
                regex::escape(SPAWN)
            ))
            .unwrap(),
            slot: Regex::new(r"(?i)\bslots?[ _#]?\d+\b").unwrap(),
            branch: Regex::new(r"\bb\d+(?:\.a\d+)?\b").unwrap(),
            space: Regex::new(r"\s+").unwrap(),
            punct: Regex::new(r"\s+([,.;:)])").unwrap(),
        }
    })
}

fn clean_pass(s: &str) -> String {
    let p = patterns();
    let s = p.keyed.replace_all(s, |c: &regex::Captures| {
        if &c[3] == "[redacted]" {
            c[0].to_string()
        } else {
            format!("{} {} [redacted]", &c[1], &c[2])
        }
    });
    let s = p.array.replace_all(&s, "[redacted]");
    let s = p.control.replace_all(&s, "");
    let s = p.slot.replace_all(&s, "");
    let s = p.branch.replace_all(&s, "");
    let s = p.space.replace_all(&s, " ");
    let s = p.punct.replace_all(&s, "$1");
    s.trim().to_string()
}

/// Removes answer payloads, orchestration vocabulary and branch-local ids.
/// Idempotent.
pub fn clean_text(s: &str) -> String {
    let mut cur = clean_pass(s);
    loop {
        let next = clean_pass(&cur);
        if next == cur {
            return cur;
        }
        cur = next;
    }
}

impl CleanEvidence {
    fn rationale(&self) -> String {
        match (self.insight.is_empty(), self.recommendation.is_empty()) {
            (false, false) => format!("{} {}", self.insight, self.recommendation),
            (false, true) => self.insight.clone(),
            _ => self.recommendation.clone(),
        }
    }

    /// Rule drafts implied by this evidence, in application order.
    pub fn drafts(&self) -> Vec<RuleDraft> {
        let winner: BTreeSet<String> = self.winner_chain.iter().cloned().collect();
        let mut out = Vec::new();
        let draft = |kind, preferred, avoided| RuleDraft {
            kind,
            applicability: self.applicability.clone(),
            preferred,
            avoided,
            rationale: self.rationale(),
            note_seq: self.seq,
        };
        match self.evidence_class {
            EvidenceClass::Comparative if !winner.is_empty() => {
                let losers: BTreeSet<String> = self.loser_chains.iter().flatten().cloned().collect();
                let pre: BTreeSet<String> = winner.difference(&losers).cloned().collect();
                let avo: BTreeSet<String> = losers.difference(&winner).cloned().collect();
                if pre.is_empty() {
                    out.push(draft(RuleKind::ConditionAction, winner.clone(), BTreeSet::new()));
                } else {
                    out.push(draft(RuleKind::ToolPreference, pre, avo));
                }
            }
            EvidenceClass::SingleExecution if !winner.is_empty() => {
                out.push(draft(RuleKind::ConditionAction, winner.clone(), BTreeSet::new()));
            }
            _ => {}
        }
        let failing: BTreeSet<String> = self.error_tools.difference(&winner).cloned().collect();
        if !failing.is_empty() {
            out.push(draft(RuleKind::Avoidance, BTreeSet::new(), failing));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn redacts_arrays_and_keyed_answers() {
        let s = clean_text("ground_truth = [1.5, 2.25, 3] and answer: increasing; pred [4,5]");
        assert_eq!(s, "ground_truth = [redacted] and answer: [redacted]; pred [redacted]");
    }

    #[test]
    fn strips_control_vocabulary() {
        let s = clean_text("Used spawn_subagent then evaluate_batch_against_gt on slot 0 and b1; naive won.");
        assert!(!s.contains("spawn_subagent") && !s.contains("evaluate") && !s.contains("b1"));
        assert!(!s.contains("slot"));
        assert!(s.contains("naive won"));
    }

    #[test]
    fn idempotent_and_preserving() {
        let t = "seasonal_naive reached mae 1.585 against naive at mae 1.821.";
        assert_eq!(clean_text(t), t);
        let messy = "answer=[1,2]  [3 , 4] spawn_subagent ,x";
        let once = clean_text(messy);
        assert_eq!(clean_text(&once), once);
    }
}
