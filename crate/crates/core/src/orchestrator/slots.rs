//! Branch slot assignment: roles, tool hints and slot-local visibility.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::model::{BranchRole, TaskInstance};
use crate::registry::{sample_visible_subset, Mode, RegistryError, ToolCategory, ToolRegistry, ToolUsageLedger};
use crate::store::Selection;

use super::ExplorationConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct SlotAssignment {
    pub slot: usize,
    pub role: BranchRole,
    pub hint: String,
    pub goal: String,
    /// Slot-local visible tool ids.
    pub visible: BTreeSet<String>,
}

impl SlotAssignment {
    pub fn branch_id(&self) -> String {
        branch_id(self.slot)
    }
}

pub fn branch_id(slot: usize) -> String {
    format!("b{slot}")
}

/// Category whose tools compete to answer the instance directly.
pub fn answer_category(instance: &TaskInstance) -> ToolCategory {
    if instance.task_type.is_numeric() && instance.task_type != crate::model::TaskType::Indicator {
        ToolCategory::Forecasting
    } else {
        ToolCategory::Analysis
    }
}

/// Tool the prior-guided slot should follow, when memory prefers one of
/// the scope's answer tools.
pub fn prior_tool(registry: &ToolRegistry, instance: &TaskInstance, selection: &Selection) -> Option<String> {
    let category = answer_category(instance);
    let ids: Vec<String> = registry
        .visible(&instance.scope, Mode::Exploration)
        .into_iter()
        .filter(|d| d.category == category)
        .map(|d| d.tool_id.clone())
        .collect();
    selection.top_preferred(ids.iter())
}

fn goal(role: BranchRole, hint: &str, prior: Option<&str>) -> String {
    match (role, prior) {
        (BranchRole::PriorGuided, _) => format!("follow the stored preference and answer with {hint}"),
        (BranchRole::Alternative, Some(p)) => format!("answer with {hint} instead of {p} so the two can be compared"),
        _ => format!("answer the task starting from {hint}"),
    }
}

/// Assigns one role, hint and visible subset per branch slot.
///
/// With a prior tool and the prior/alternative requirement on, slot 0 is
/// prior-guided (its hint is forced visible) and slot 1 is an alternative
/// that excludes the prior tool. Remaining hints prefer visible answer
/// tools in increasing ledger count, with a seeded shuffle breaking ties,
/// and avoid repeating a hint already taken.
pub fn assign_branch_slots(
    registry: &ToolRegistry,
    ledger: &ToolUsageLedger,
    instance: &TaskInstance,
    prior: Option<&str>,
    config: &ExplorationConfig,
    episode_seed: u64,
) -> Result<Vec<SlotAssignment>, RegistryError> {
    let scope = &instance.scope;
    let category = answer_category(instance);
    let all: Vec<String> = registry
        .visible(scope, Mode::Exploration)
        .into_iter()
        .filter(|d| d.category == category)
        .map(|d| d.tool_id.clone())
        .collect();
    let paired = prior.is_some() && config.require_prior_and_alternative;
    let mut taken: Vec<String> = Vec::new();
    let mut out = Vec::with_capacity(config.branch_slots);
    for slot in 0..config.branch_slots {
        let mut visible = sample_visible_subset(registry, ledger, scope, slot, episode_seed, config.alpha)?;
        let role = match (paired, slot) {
            (true, 0) => BranchRole::PriorGuided,
            (true, 1) => BranchRole::Alternative,
            _ => BranchRole::Free,
        };
        let hint = if role == BranchRole::PriorGuided {
            prior.expect("paired implies prior").to_string()
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(episode_seed ^ (slot as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
            let excluded = |t: &String| role == BranchRole::Alternative && Some(t.as_str()) == prior;
            let mut pool: Vec<String> = all.iter().filter(|t| visible.contains(*t) && !excluded(t)).cloned().collect();
            if pool.is_empty() {
                pool = all.iter().filter(|t| !excluded(t)).cloned().collect();
            }
            pool.shuffle(&mut rng);
            pool.sort_by_key(|t| ledger.count(scope, t));
            pool.iter()
                .find(|t| !taken.contains(t))
                .or(pool.first())
                .cloned()
                .unwrap_or_else(|| all.first().cloned().unwrap_or_default())
        };
        if !hint.is_empty() {
            visible.insert(hint.clone());
        }
        taken.push(hint.clone());
        out.push(SlotAssignment { slot, role, goal: goal(role, &hint, prior), hint, visible });
    }
    Ok(out)
}
