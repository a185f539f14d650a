//! Memory rules and the conflict-aware update over them.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::prompt::Applicability;

/// Hard cap on rules per scope.
pub const MEMORY_CAP: usize = 30;
/// Confidence of a freshly appended rule.
pub const INITIAL_CONFIDENCE: f64 = 0.5;
/// Fraction of the remaining headroom added on each agreeing evidence.
pub const STRENGTHEN_RATE: f64 = 0.2;
/// Support margin that settles a conflict.
pub const CONFLICT_MARGIN: u32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleKind {
    ToolPreference,
    ConditionAction,
    Avoidance,
}

impl RuleKind {
    pub fn as_str(self) -> &'static str {
        match self {
            RuleKind::ToolPreference => "tool_preference",
            RuleKind::ConditionAction => "condition_action",
            RuleKind::Avoidance => "avoidance",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryRule {
    pub id: u64,
    pub kind: RuleKind,
    pub summary: String,
    pub applicability: Applicability,
    pub preferred_tools: BTreeSet<String>,
    pub avoided_tools: BTreeSet<String>,
    pub rationale: String,
    /// Note sequence numbers backing the rule.
    pub evidence: Vec<u64>,
    pub confidence: f64,
    pub injectable: bool,
}

impl MemoryRule {
    fn stance_contradicts(&self, other: &RuleDraft) -> bool {
        self.applicability == other.applicability
            && (!self.preferred_tools.is_disjoint(&other.avoided)
                || !self.avoided_tools.is_disjoint(&other.preferred))
    }

    fn contradicts(&self, other: &MemoryRule) -> bool {
        self.applicability == other.applicability
            && (!self.preferred_tools.is_disjoint(&other.avoided_tools)
                || !self.avoided_tools.is_disjoint(&other.preferred_tools))
    }

    fn similar(&self, d: &RuleDraft) -> bool {
        self.kind == d.kind
            && self.applicability == d.applicability
            && if self.preferred_tools.is_empty() && d.preferred.is_empty() {
                !self.avoided_tools.is_disjoint(&d.avoided)
            } else {
                !self.preferred_tools.is_disjoint(&d.preferred)
            }
    }
}

/// A candidate rule derived from one cleaned note.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleDraft {
    pub kind: RuleKind,
    pub applicability: Applicability,
    pub preferred: BTreeSet<String>,
    pub avoided: BTreeSet<String>,
    pub rationale: String,
    pub note_seq: u64,
}

impl RuleDraft {
    pub fn summary(&self) -> String {
        rule_summary(self.kind, &self.applicability, &self.preferred, &self.avoided)
    }
}

fn list(set: &BTreeSet<String>) -> String {
    set.iter().cloned().collect::<Vec<_>>().join(", ")
}

pub fn rule_summary(kind: RuleKind, chi: &Applicability, pre: &BTreeSet<String>, avo: &BTreeSet<String>) -> String {
    let when = chi.describe();
    match kind {
        RuleKind::ToolPreference if avo.is_empty() => format!("Prefer {} when {when}.", list(pre)),
        RuleKind::ToolPreference => format!("Prefer {} over {} when {when}.", list(pre), list(avo)),
        RuleKind::ConditionAction => format!("When {when}, use {}.", list(pre)),
        RuleKind::Avoidance => format!("Avoid {} when {when}; it failed to produce usable output.", list(avo)),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ConflictStatus {
    Open,
    Resolved { winner: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conflict {
    pub a: u64,
    pub b: u64,
    pub support_a: u32,
    pub support_b: u32,
    #[serde(flatten)]
    pub status: ConflictStatus,
}

impl Conflict {
    fn involves(&self, id: u64) -> bool {
        self.a == id || self.b == id
    }

    fn is_open(&self) -> bool {
        self.status == ConflictStatus::Open
    }

    fn pair(&self, x: u64, y: u64) -> bool {
        (self.a == x && self.b == y) || (self.a == y && self.b == x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateAction {
    Append,
    Merge,
    Strengthen,
    Conflict,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct UpdateReport {
    pub actions: Vec<(u64, UpdateAction)>,
    pub resolved: Vec<(u64, u64)>,
    pub evicted: Vec<u64>,
}

/// Rules of one scope plus the bookkeeping the update needs.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MemoryState {
    pub rules: Vec<MemoryRule>,
    pub conflicts: Vec<Conflict>,
    /// Losers of settled conflicts; they never become injectable again.
    pub demoted: BTreeSet<u64>,
    pub next_rule_id: u64,
}

impl MemoryState {
    pub fn get(&self, id: u64) -> Option<&MemoryRule> {
        self.rules.iter().find(|r| r.id == id)
    }

    fn idx(&self, id: u64) -> usize {
        self.rules.iter().position(|r| r.id == id).expect("rule id present")
    }

    pub fn open_conflicts(&self) -> impl Iterator<Item = &Conflict> {
        self.conflicts.iter().filter(|c| c.is_open())
    }

    /// Applies one rule draft.
    pub fn apply(&mut self, d: &RuleDraft) -> (u64, UpdateAction, Option<u64>) {
        let target = self
            .rules
            .iter()
            .filter(|r| r.similar(d))
            .max_by(|a, b| {
                let oa = a.preferred_tools.intersection(&d.preferred).count();
                let ob = b.preferred_tools.intersection(&d.preferred).count();
                oa.cmp(&ob).then(a.confidence.total_cmp(&b.confidence)).then(b.id.cmp(&a.id))
            })
            .filter(|r| !r.stance_contradicts(d))
            .map(|r| r.id);

        let (id, mut action, appended) = match target {
            Some(id) => {
                let i = self.idx(id);
                let r = &mut self.rules[i];
                let action = if r.preferred_tools == d.preferred && r.avoided_tools == d.avoided {
                    r.confidence = (r.confidence + (1.0 - r.confidence) * STRENGTHEN_RATE).min(1.0);
                    UpdateAction::Strengthen
                } else {
                    r.preferred_tools.extend(d.preferred.iter().cloned());
                    r.avoided_tools.extend(d.avoided.iter().cloned());
                    r.summary = rule_summary(r.kind, &r.applicability, &r.preferred_tools, &r.avoided_tools);
                    UpdateAction::Merge
                };
                if !r.evidence.contains(&d.note_seq) {
                    r.evidence.push(d.note_seq);
                }
                r.rationale = d.rationale.clone();
                for c in self.conflicts.iter_mut().filter(|c| c.is_open()) {
                    if c.a == id {
                        c.support_a += 1;
                    } else if c.b == id {
                        c.support_b += 1;
                    }
                }
                (id, action, None)
            }
            None => {
                self.next_rule_id += 1;
                let id = self.next_rule_id;
                self.rules.push(MemoryRule {
                    id,
                    kind: d.kind,
                    summary: d.summary(),
                    applicability: d.applicability.clone(),
                    preferred_tools: d.preferred.clone(),
                    avoided_tools: d.avoided.clone(),
                    rationale: d.rationale.clone(),
                    evidence: vec![d.note_seq],
                    confidence: INITIAL_CONFIDENCE,
                    injectable: true,
                });
                (id, UpdateAction::Append, Some(id))
            }
        };

        if !self.demoted.contains(&id) {
            let me = self.rules[self.idx(id)].clone();
            let rivals: Vec<u64> = self
                .rules
                .iter()
                .filter(|r| r.id != id && !self.demoted.contains(&r.id) && me.contradicts(r))
                .map(|r| r.id)
                .filter(|rid| !self.conflicts.iter().any(|c| c.pair(id, *rid)))
                .collect();
            for rid in rivals {
                self.conflicts.push(Conflict { a: rid, b: id, support_a: 0, support_b: 0, status: ConflictStatus::Open });
                action = UpdateAction::Conflict;
            }
        }
        (id, action, appended)
    }

    fn resolve(&mut self) -> Vec<(u64, u64)> {
        let mut out = Vec::new();
        for i in 0..self.conflicts.len() {
            let c = &self.conflicts[i];
            if !c.is_open() || c.support_a.abs_diff(c.support_b) < CONFLICT_MARGIN {
                continue;
            }
            let (winner, loser) = if c.support_a > c.support_b { (c.a, c.b) } else { (c.b, c.a) };
            self.conflicts[i].status = ConflictStatus::Resolved { winner };
            let li = self.idx(loser);
            self.rules[li].confidence *= 0.5;
            self.demoted.insert(loser);
            out.push((winner, loser));
        }
        out
    }

    fn evict(&mut self, keep: Option<u64>) -> Vec<u64> {
        let mut out = Vec::new();
        while self.rules.len() > MEMORY_CAP {
            let pick = |injectable: bool| {
                self.rules
                    .iter()
                    .filter(|r| Some(r.id) != keep && (injectable || !r.injectable))
                    .min_by(|a, b| a.confidence.total_cmp(&b.confidence).then(a.id.cmp(&b.id)))
                    .map(|r| r.id)
            };
            let Some(id) = pick(false).or_else(|| pick(true)) else { break };
            self.rules.retain(|r| r.id != id);
            self.conflicts.retain(|c| !c.involves(id));
            self.demoted.remove(&id);
            out.push(id);
            self.refresh_injectable();
        }
        out
    }

    fn refresh_injectable(&mut self) {
        let blocked: BTreeSet<u64> = self.open_conflicts().flat_map(|c| [c.a, c.b]).collect();
        for r in &mut self.rules {
            r.injectable = !self.demoted.contains(&r.id) && !blocked.contains(&r.id);
        }
    }

    /// Applies every draft of one evidence, then settles conflicts, updates
    /// injectability and enforces the cap.
    pub fn update(&mut self, drafts: &[RuleDraft]) -> UpdateReport {
        let mut report = UpdateReport::default();
        for d in drafts {
            let (id, action, appended) = self.apply(d);
            report.actions.push((id, action));
            report.resolved.extend(self.resolve());
            self.refresh_injectable();
            if appended.is_some() {
                report.evicted.extend(self.evict(appended));
            }
        }
        report
    }

    /// Pairs of simultaneously injectable rules with the same applicability
    /// and contradictory stances. Always empty after [`MemoryState::update`].
    pub fn injectable_contradictions(&self) -> Vec<(u64, u64)> {
        let live: Vec<&MemoryRule> = self.rules.iter().filter(|r| r.injectable).collect();
        let mut out = Vec::new();
        for (i, a) in live.iter().enumerate() {
            for b in &live[i + 1..] {
                if a.contradicts(b) {
                    out.push((a.id, b.id));
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(xs: &[&str]) -> BTreeSet<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    fn chi() -> Applicability {
        Applicability { task_subtype: Some("forecast".into()), seasonal: Some(true), ..Default::default() }
    }

    fn draft(kind: RuleKind, pre: &[&str], avo: &[&str], seq: u64) -> RuleDraft {
        RuleDraft { kind, applicability: chi(), preferred: set(pre), avoided: set(avo), rationale: String::new(), note_seq: seq }
    }

    #[test]
    fn append_then_strengthen() {
        let mut m = MemoryState::default();
        let r = m.update(&[draft(RuleKind::ToolPreference, &["seasonal_naive"], &["naive"], 1)]);
        assert_eq!(r.actions, vec![(1, UpdateAction::Append)]);
        assert_eq!(m.rules[0].confidence, 0.5);
        let r = m.update(&[draft(RuleKind::ToolPreference, &["seasonal_naive"], &["naive"], 2)]);
        assert_eq!(r.actions, vec![(1, UpdateAction::Strengthen)]);
        assert!((m.rules[0].confidence - 0.6).abs() < 1e-12);
        assert_eq!(m.rules.len(), 1);
        assert_eq!(m.rules[0].evidence, vec![1, 2]);
    }

    #[test]
    fn merge_unions_stances() {
        let mut m = MemoryState::default();
        m.update(&[draft(RuleKind::ToolPreference, &["seasonal_naive"], &["naive"], 1)]);
        let r = m.update(&[draft(RuleKind::ToolPreference, &["seasonal_naive"], &["drift"], 2)]);
        assert_eq!(r.actions[0].1, UpdateAction::Merge);
        assert_eq!(m.rules[0].avoided_tools, set(&["drift", "naive"]));
        assert_eq!(m.rules[0].confidence, 0.5);
    }

    #[test]
    fn avoidance_against_preference_conflicts() {
        let mut m = MemoryState::default();
        m.update(&[draft(RuleKind::Avoidance, &[], &["holt"], 1)]);
        let r = m.update(&[draft(RuleKind::ToolPreference, &["holt"], &[], 2)]);
        assert_eq!(r.actions[0].1, UpdateAction::Conflict);
        assert!(m.rules.iter().all(|r| !r.injectable));
        assert_eq!(m.open_conflicts().count(), 1);
    }

    #[test]
    fn conflict_settles_after_margin() {
        let mut m = MemoryState::default();
        m.update(&[draft(RuleKind::ToolPreference, &["seasonal_naive"], &["naive"], 1)]);
        m.update(&[draft(RuleKind::ToolPreference, &["naive"], &["seasonal_naive"], 2)]);
        assert!(m.rules.iter().all(|r| !r.injectable));
        m.update(&[draft(RuleKind::ToolPreference, &["seasonal_naive"], &["naive"], 3)]);
        assert!(m.rules.iter().all(|r| !r.injectable));
        assert!(m.injectable_contradictions().is_empty());
        let r = m.update(&[draft(RuleKind::ToolPreference, &["seasonal_naive"], &["naive"], 4)]);
        assert_eq!(r.resolved, vec![(1, 2)]);
        assert!(m.get(1).unwrap().injectable);
        let loser = m.get(2).unwrap();
        assert!(!loser.injectable);
        assert_eq!(loser.confidence, 0.25);
        m.update(&[draft(RuleKind::ToolPreference, &["naive"], &["seasonal_naive"], 5)]);
        assert!(m.get(1).unwrap().injectable);
        assert_eq!(m.open_conflicts().count(), 0);
    }

    #[test]
    fn cap_evicts_lowest() {
        let mut m = MemoryState::default();
        for i in 0..40u64 {
            let t = format!("t{i}");
            m.update(&[draft(RuleKind::ConditionAction, &[t.as_str()], &[], i + 1)]);
            assert!(m.rules.len() <= MEMORY_CAP);
        }
        assert_eq!(m.rules.len(), MEMORY_CAP);
        assert_eq!(m.rules[0].id, 11);
    }
}
