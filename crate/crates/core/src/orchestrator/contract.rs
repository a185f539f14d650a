//! Post-episode check of the exploration contract against the trace.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::answer::final_type;
use super::trace::{Trace, TraceKind, MAIN_BRANCH};
use crate::model::Answer;
use crate::toolkit::{EVALUATE, EVALUATE_BATCH, SPAWN};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Violation {
    TooFewValid,
    NoComparison,
    WrongFinalType,
    NoDistinctPair,
    MissingPriorOrAlternative,
}

impl Violation {
    pub fn code(self) -> &'static str {
        match self {
            Violation::TooFewValid => "too_few_valid",
            Violation::NoComparison => "no_comparison",
            Violation::WrongFinalType => "wrong_final_type",
            Violation::NoDistinctPair => "no_distinct_pair",
            Violation::MissingPriorOrAlternative => "missing_prior_or_alternative",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ContractVerdict {
    pub violations: Vec<Violation>,
}

impl ContractVerdict {
    pub fn pass(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn codes(&self) -> Vec<&'static str> {
        self.violations.iter().map(|v| v.code()).collect()
    }

    pub fn label(&self) -> String {
        if self.pass() {
            "pass".into()
        } else {
            self.codes().join(",")
        }
    }
}

/// Branch summary as reported back to the main agent by the spawn tool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchSummary {
    pub branch_id: String,
    pub slot: usize,
    pub role: crate::model::BranchRole,
    pub hint: String,
    pub valid: bool,
    #[serde(default)]
    pub answer: Option<Answer>,
    #[serde(default)]
    pub tool_chain: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub invalid_reason: Option<String>,
    #[serde(default)]
    pub failed: bool,
}

fn main_results<'a>(trace: &'a Trace, tool: &'a str) -> impl Iterator<Item = &'a Value> + 'a {
    trace
        .of_kind(TraceKind::ToolResult)
        .filter(move |e| e.branch == MAIN_BRANCH && e.payload.get("tool").and_then(Value::as_str) == Some(tool))
        .map(|e| &e.payload)
}

pub fn spawned_branches(trace: &Trace) -> Vec<BranchSummary> {
    main_results(trace, SPAWN)
        .filter_map(|p| p.get("engine")?.get("branches"))
        .filter_map(|b| serde_json::from_value::<Vec<BranchSummary>>(b.clone()).ok())
        .flatten()
        .collect()
}

/// Candidates whose answers an evaluator call scored, per call.
pub fn evaluated_sets(trace: &Trace) -> Vec<BTreeSet<String>> {
    [EVALUATE, EVALUATE_BATCH]
        .iter()
        .flat_map(|t| main_results(trace, t))
        .filter_map(|p| p.get("artifact")?.get("payload")?.get("reports")?.as_array())
        .map(|reports| {
            reports
                .iter()
                .filter(|r| r.get("report").is_some_and(|x| !x.is_null()))
                .filter_map(|r| r.get("candidate")?.as_str().map(str::to_string))
                .collect()
        })
        .collect()
}

pub fn final_text(trace: &Trace) -> Option<String> {
    trace
        .of_kind(TraceKind::GatewayResponse)
        .filter(|e| e.branch == MAIN_BRANCH)
        .last()
        .and_then(|e| e.payload.get("message"))
        .filter(|m| m.get("tool_calls").and_then(Value::as_array).is_none_or(|c| c.is_empty()))
        .and_then(|m| m.get("content")?.as_str().map(str::to_string))
}

/// Checks a finalized exploration trace. Pure: the verdict depends on the
/// trace alone.
pub fn enforce_exploration_contract(trace: &Trace) -> ContractVerdict {
    let branches = spawned_branches(trace);
    let valid: Vec<&BranchSummary> = branches.iter().filter(|b| b.valid).collect();
    let valid_ids: BTreeSet<&str> = valid.iter().map(|b| b.branch_id.as_str()).collect();
    let mut v = Vec::new();

    if valid.len() < trace.header.min_valid_candidates {
        v.push(Violation::TooFewValid);
    }
    let need = valid.len().min(2);
    let covered = evaluated_sets(trace)
        .iter()
        .any(|s| need > 0 && s.iter().filter(|c| valid_ids.contains(c.as_str())).count() >= need);
    if !covered {
        v.push(Violation::NoComparison);
    }
    if final_text(trace).and_then(|t| final_type(&t)).as_deref() != Some("learning_summary") {
        v.push(Violation::WrongFinalType);
    }
    if valid.len() >= 2 {
        let distinct = valid.iter().enumerate().any(|(i, a)| {
            valid[i + 1..].iter().any(|b| {
                a.tool_chain != b.tool_chain
                    || match (&a.answer, &b.answer) {
                        (Some(x), Some(y)) => x.differs_from(y),
                        _ => true,
                    }
            })
        });
        if !distinct {
            v.push(Violation::NoDistinctPair);
        }
    }
    if trace.header.prior_exists && trace.header.require_prior_and_alternative {
        let roles: BTreeSet<_> = branches.iter().map(|b| b.role).collect();
        if !roles.contains(&crate::model::BranchRole::PriorGuided) || !roles.contains(&crate::model::BranchRole::Alternative) {
            v.push(Violation::MissingPriorOrAlternative);
        }
    }
    v.sort();
    ContractVerdict { violations: v }
}
