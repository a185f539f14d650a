//! Layered experience store: soul, notes, memory rules, tool notes, skills
//! and decision skills, with snapshots and injectable retrieval.
//!
//! Layout under the store root:
//!
//! ```text
//! soul.md
//! notes/<scope>.md               append-only note blocks
//! memory/<scope>.json            rule array
//! memory/<scope>.state.json      conflicts, demotions, id counter, watermark
//! tools/<tool>.md                one section per scope
//! skills/<scope>.md
//! skills_decision/<scope>.md
//! fingerprints/<scope>           memory digest
//! snapshots/<scope>/<digest>/    full copies, plus timeline.json
//! history/<scope>.jsonl          usage diagnostics per episode
//! ```

mod backend;
mod notes;
mod rules;

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

use backend::Backend;
pub use notes::{
    clean, clean_text, summarize_episode, template_summary, Clean, CleanEvidence, LearningNote, NoteCandidate,
    NoteContext,
};
pub use rules::{
    rule_summary, Conflict, ConflictStatus, MemoryRule, MemoryState, RuleDraft, RuleKind, UpdateAction, UpdateReport,
    CONFLICT_MARGIN, INITIAL_CONFIDENCE, MEMORY_CAP, STRENGTHEN_RATE,
};

use crate::prompt::{matches, SampleFingerprint};

/// Notes per scope between automatic distillations.
pub const DISTILL_EVERY: u64 = 10;

pub const DEFAULT_SOUL: &str = "You are a time-series analysis agent. Inspect the series with tools before answering. \
Answer only in the requested output format. Treat stored experience as guidance for tool choice, not as a source of answers.";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("i/o error at {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("corrupt store file {path}: {message}")]
    Corrupt { path: String, message: String },
}

/// Applies one cleaned evidence to a memory, returning the new memory and
/// the primary action taken.
pub fn update_memory(memory: &MemoryState, evidence: &CleanEvidence) -> (MemoryState, Option<UpdateAction>) {
    let mut next = memory.clone();
    let report = next.update(&evidence.drafts());
    let action = report.actions.first().map(|(_, a)| *a);
    (next, action)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    NotesToMemory,
    MemoryToToolNotes,
    MemoryToSkills,
    MemoryToSkillsDecision,
}

/// Prompt-eligible experience for one sample.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Selection {
    pub soul: String,
    pub rules: Vec<MemoryRule>,
    pub skills: Option<String>,
    pub skills_decision: Option<String>,
    pub tool_notes: BTreeMap<String, String>,
}

impl Selection {
    pub fn empty(soul: impl Into<String>) -> Self {
        Self { soul: soul.into(), ..Self::default() }
    }

    pub fn has_prior(&self) -> bool {
        !self.rules.is_empty()
    }

    /// Net confidence-weighted stance per tool over the selected rules.
    pub fn tool_scores(&self) -> BTreeMap<String, f64> {
        tool_scores(self.rules.iter().map(|r| (&r.preferred_tools, &r.avoided_tools, r.confidence)))
    }

    /// Highest-scoring preferred tool among `candidates`, if any scores
    /// above zero. Ties go to the alphabetically first tool.
    pub fn top_preferred<'a>(&self, candidates: impl IntoIterator<Item = &'a String>) -> Option<String> {
        best_tool(&self.tool_scores(), candidates)
    }
}

pub fn tool_scores<'a>(
    rules: impl IntoIterator<Item = (&'a BTreeSet<String>, &'a BTreeSet<String>, f64)>,
) -> BTreeMap<String, f64> {
    let mut scores: BTreeMap<String, f64> = BTreeMap::new();
    for (pre, avo, c) in rules {
        for t in pre {
            *scores.entry(t.clone()).or_default() += c;
        }
        for t in avo {
            *scores.entry(t.clone()).or_default() -= c;
        }
    }
    scores
}

pub fn best_tool<'a>(scores: &BTreeMap<String, f64>, candidates: impl IntoIterator<Item = &'a String>) -> Option<String> {
    let mut best: Option<(&String, f64)> = None;
    let mut cands: Vec<&String> = candidates.into_iter().collect();
    cands.sort();
    for t in cands {
        let s = scores.get(t).copied().unwrap_or(0.0);
        if s > 0.0 && best.is_none_or(|(_, b)| s > b) {
            best = Some((t, s));
        }
    }
    best.map(|(t, _)| t.clone())
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CommitReport {
    /// Sequence number, or `None` when the note lacked evaluation evidence.
    pub seq: Option<u64>,
    pub stages: Vec<Stage>,
    pub snapshot: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SnapshotEntry {
    pub index: u64,
    pub digest: String,
    pub notes: u64,
    pub rules: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScopeReport {
    pub scope: String,
    pub notes: u64,
    pub pending_notes: u64,
    pub rules: usize,
    pub injectable_rules: usize,
    pub injectable_fraction: f64,
    pub conflicts_open: usize,
    pub conflicts_total: usize,
    pub snapshots: Vec<SnapshotEntry>,
    pub entropy_history: Vec<Value>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct StateFile {
    conflicts: Vec<Conflict>,
    demoted: BTreeSet<u64>,
    next_rule_id: u64,
    watermark: u64,
}

#[derive(Debug, Default)]
struct ScopeCache {
    loaded: bool,
    notes: Vec<LearningNote>,
    memory: MemoryState,
    watermark: u64,
}

fn file_key(scope: &str) -> String {
    scope
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.') { c } else { '_' })
        .collect()
}

fn sha(parts: &[(&str, &str)]) -> String {
    let mut h = Sha256::new();
    for (k, v) in parts {
        h.update(k.as_bytes());
        h.update([0]);
        h.update(v.as_bytes());
        h.update([0]);
    }
    hex::encode(h.finalize())
}

fn corrupt(path: &str, e: impl std::fmt::Display) -> StoreError {
    StoreError::Corrupt { path: path.to_string(), message: e.to_string() }
}

#[derive(Debug)]
pub struct ExperienceStore {
    backend: Backend,
    scopes: Mutex<BTreeMap<String, Arc<Mutex<ScopeCache>>>>,
    tools_lock: Mutex<()>,
}

impl ExperienceStore {
    /// Opens (creating if needed) a store rooted at `root`.
    pub fn open(root: &Path) -> Result<Self, StoreError> {
        std::fs::create_dir_all(root).map_err(|source| StoreError::Io { path: root.into(), source })?;
        let s = Self::with_backend(Backend::Disk(root.to_path_buf()));
        if !s.backend.exists("soul.md") {
            s.backend.write("soul.md", &format!("{DEFAULT_SOUL}\n"))?;
        }
        Ok(s)
    }

    pub fn in_memory() -> Self {
        let s = Self::with_backend(Backend::Memory(Mutex::new(BTreeMap::new())));
        s.backend.write("soul.md", &format!("{DEFAULT_SOUL}\n")).expect("in-memory write");
        s
    }

    fn with_backend(backend: Backend) -> Self {
        Self { backend, scopes: Mutex::new(BTreeMap::new()), tools_lock: Mutex::new(()) }
    }

    pub fn root(&self) -> Option<&Path> {
        match &self.backend {
            Backend::Disk(p) => Some(p),
            Backend::Memory(_) => None,
        }
    }

    pub fn soul(&self) -> Result<String, StoreError> {
        Ok(self.backend.read("soul.md")?.unwrap_or_else(|| DEFAULT_SOUL.to_string()))
    }

    fn scope(&self, scope: &str) -> Result<Arc<Mutex<ScopeCache>>, StoreError> {
        let cell = self.scopes.lock().expect("scope map").entry(scope.to_string()).or_default().clone();
        {
            let mut c = cell.lock().expect("scope cache");
            if !c.loaded {
                *c = self.load_scope(scope)?;
            }
        }
        Ok(cell)
    }

    fn load_scope(&self, scope: &str) -> Result<ScopeCache, StoreError> {
        let key = file_key(scope);
        let notes_path = format!("notes/{key}.md");
        let mut notes = Vec::new();
        if let Some(raw) = self.backend.read(&notes_path)? {
            let mut lines = raw.lines();
            while let Some(l) = lines.next() {
                if l.trim() == "```json" {
                    let body = lines.next().unwrap_or_default();
                    notes.push(serde_json::from_str::<LearningNote>(body).map_err(|e| corrupt(&notes_path, e))?);
                }
            }
        }
        let mem_path = format!("memory/{key}.json");
        let rules: Vec<MemoryRule> = match self.backend.read(&mem_path)? {
            Some(raw) => serde_json::from_str(&raw).map_err(|e| corrupt(&mem_path, e))?,
            None => Vec::new(),
        };
        let state_path = format!("memory/{key}.state.json");
        let state: StateFile = match self.backend.read(&state_path)? {
            Some(raw) => serde_json::from_str(&raw).map_err(|e| corrupt(&state_path, e))?,
            None => StateFile::default(),
        };
        Ok(ScopeCache {
            loaded: true,
            notes,
            memory: MemoryState {
                rules,
                conflicts: state.conflicts,
                demoted: state.demoted,
                next_rule_id: state.next_rule_id,
            },
            watermark: state.watermark,
        })
    }

    fn memory_json(m: &MemoryState) -> String {
        serde_json::to_string_pretty(&m.rules).expect("rules serialize") + "\n"
    }

    fn persist_memory(&self, scope: &str, c: &ScopeCache) -> Result<(), StoreError> {
        let key = file_key(scope);
        self.backend.write(&format!("memory/{key}.json"), &Self::memory_json(&c.memory))?;
        let state = StateFile {
            conflicts: c.memory.conflicts.clone(),
            demoted: c.memory.demoted.clone(),
            next_rule_id: c.memory.next_rule_id,
            watermark: c.watermark,
        };
        self.backend.write(&format!("memory/{key}.state.json"), &(serde_json::to_string_pretty(&state).expect("state") + "\n"))
    }

    /// Appends a note if it carries evaluation evidence, then runs
    /// distillation when the pending count reaches [`DISTILL_EVERY`].
    pub fn commit_note(&self, mut note: LearningNote) -> Result<CommitReport, StoreError> {
        if !note.evaluated {
            return Ok(CommitReport::default());
        }
        let scope = note.scope.clone();
        let cell = self.scope(&scope)?;
        let mut c = cell.lock().expect("scope cache");
        let seq = c.notes.len() as u64 + 1;
        note.seq = seq;
        let block = format!(
            "## Note {seq}\n\n```json\n{}\n```\n\n",
            serde_json::to_string(&note).expect("note serializes")
        );
        self.backend.append(&format!("notes/{}.md", file_key(&scope)), &block)?;
        c.notes.push(note);
        let mut report = CommitReport { seq: Some(seq), ..Default::default() };
        if seq - c.watermark >= DISTILL_EVERY {
            let (stages, snap) = self.distill(&scope, &mut c)?;
            report.stages = stages;
            report.snapshot = Some(snap);
        }
        Ok(report)
    }

    /// Flushes a shorter pending tail through distillation.
    pub fn finalize(&self, scope: &str) -> Result<Vec<Stage>, StoreError> {
        let cell = self.scope(scope)?;
        let mut c = cell.lock().expect("scope cache");
        if c.notes.len() as u64 > c.watermark {
            Ok(self.distill(scope, &mut c)?.0)
        } else {
            Ok(Vec::new())
        }
    }

    pub fn finalize_all(&self) -> Result<BTreeMap<String, Vec<Stage>>, StoreError> {
        let mut out = BTreeMap::new();
        for s in self.scopes()? {
            out.insert(s.clone(), self.finalize(&s)?);
        }
        Ok(out)
    }

    fn distill(&self, scope: &str, c: &mut ScopeCache) -> Result<(Vec<Stage>, String), StoreError> {
        let mut stages = vec![Stage::NotesToMemory];
        let pending: Vec<LearningNote> = c.notes.iter().filter(|n| n.seq > c.watermark).cloned().collect();
        for note in &pending {
            let ev = clean(note);
            c.memory.update(&ev.drafts());
        }
        c.watermark = c.notes.len() as u64;
        self.persist_memory(scope, c)?;
        let key = file_key(scope);
        let digest = sha(&[("memory", &Self::memory_json(&c.memory))]);
        let fp_path = format!("fingerprints/{key}");
        let previous = self.backend.read(&fp_path)?;
        if previous.as_deref().map(str::trim) != Some(digest.as_str()) {
            self.backend.write(&fp_path, &format!("{digest}\n"))?;
            self.rebuild_tool_notes(scope, &c.memory)?;
            stages.push(Stage::MemoryToToolNotes);
            self.backend.write(&format!("skills/{key}.md"), &render_skills(scope, &c.memory))?;
            stages.push(Stage::MemoryToSkills);
            self.backend.write(&format!("skills_decision/{key}.md"), &render_decisions(scope, &c.memory))?;
            stages.push(Stage::MemoryToSkillsDecision);
        }
        let snap = self.snapshot_locked(scope, c)?;
        Ok((stages, snap))
    }

    fn rebuild_tool_notes(&self, scope: &str, m: &MemoryState) -> Result<(), StoreError> {
        let _g = self.tools_lock.lock().expect("tools lock");
        let mut lines: BTreeMap<String, Vec<String>> = BTreeMap::new();
        let mut live: Vec<&MemoryRule> = m.rules.iter().filter(|r| r.injectable).collect();
        live.sort_by(|a, b| b.confidence.total_cmp(&a.confidence).then(a.id.cmp(&b.id)));
        for r in live {
            let when = r.applicability.describe();
            for t in &r.preferred_tools {
                lines.entry(t.clone()).or_default().push(format!(
                    "- preferred when {when} (M{}, confidence {:.2})",
                    r.id, r.confidence
                ));
            }
            for t in &r.avoided_tools {
                lines.entry(t.clone()).or_default().push(format!(
                    "- avoided when {when} (M{}, confidence {:.2})",
                    r.id, r.confidence
                ));
            }
        }
        let mut tools: BTreeSet<String> = lines.keys().cloned().collect();
        for path in self.backend.list("tools/")? {
            if let Some(t) = path.strip_prefix("tools/").and_then(|p| p.strip_suffix(".md")) {
                tools.insert(t.to_string());
            }
        }
        for tool in tools {
            let path = format!("tools/{tool}.md");
            let existing = self.backend.read(&path)?;
            let mut sections = parse_sections(existing.as_deref().unwrap_or(""));
            match lines.get(&tool) {
                Some(l) => {
                    sections.insert(scope.to_string(), l.join("\n"));
                }
                None => {
                    if sections.remove(scope).is_none() {
                        continue;
                    }
                }
            }
            let mut out = format!("# Tool: {tool}\n");
            for (s, body) in &sections {
                out.push_str(&format!("\n## Scope: {s}\n{body}\n"));
            }
            if existing.as_deref() != Some(out.as_str()) {
                self.backend.write(&path, &out)?;
            }
        }
        Ok(())
    }

    fn tool_note(&self, tool: &str, scope: &str) -> Result<Option<String>, StoreError> {
        let raw = self.backend.read(&format!("tools/{tool}.md"))?;
        Ok(raw.and_then(|r| parse_sections(&r).remove(scope)))
    }

    fn layer_files(&self, scope: &str, c: &ScopeCache) -> Result<Vec<(String, String)>, StoreError> {
        let key = file_key(scope);
        let mut files = Vec::new();
        for (name, path) in [
            ("notes.md", format!("notes/{key}.md")),
            ("memory.json", format!("memory/{key}.json")),
            ("state.json", format!("memory/{key}.state.json")),
            ("skills.md", format!("skills/{key}.md")),
            ("skills_decision.md", format!("skills_decision/{key}.md")),
            ("fingerprint", format!("fingerprints/{key}")),
        ] {
            if let Some(body) = self.backend.read(&path)? {
                files.push((name.to_string(), body));
            }
        }
        let tools: BTreeSet<&String> =
            c.memory.rules.iter().flat_map(|r| r.preferred_tools.iter().chain(r.avoided_tools.iter())).collect();
        for t in tools {
            if let Some(n) = self.tool_note(t, scope)? {
                files.push((format!("tools/{t}.md"), n + "\n"));
            }
        }
        Ok(files)
    }

    fn snapshot_locked(&self, scope: &str, c: &ScopeCache) -> Result<String, StoreError> {
        let files = self.layer_files(scope, c)?;
        let parts: Vec<(&str, &str)> = files.iter().map(|(k, v)| (k.as_str(), v.as_str())).collect();
        let digest = sha(&parts)[..16].to_string();
        let key = file_key(scope);
        let dir = format!("snapshots/{key}/{digest}");
        if !self.backend.exists(&dir) {
            for (name, body) in &files {
                self.backend.write(&format!("{dir}/{name}"), body)?;
            }
        }
        let tl_path = format!("snapshots/{key}/timeline.json");
        let mut timeline: Vec<SnapshotEntry> = match self.backend.read(&tl_path)? {
            Some(raw) => serde_json::from_str(&raw).map_err(|e| corrupt(&tl_path, e))?,
            None => Vec::new(),
        };
        if timeline.last().map(|e| e.digest.as_str()) != Some(digest.as_str()) {
            timeline.push(SnapshotEntry {
                index: timeline.len() as u64 + 1,
                digest: digest.clone(),
                notes: c.notes.len() as u64,
                rules: c.memory.rules.len(),
            });
            self.backend.write(&tl_path, &(serde_json::to_string_pretty(&timeline).expect("timeline") + "\n"))?;
        }
        Ok(digest)
    }

    /// Content-addressed copy of every layer of the scope.
    pub fn snapshot(&self, scope: &str) -> Result<String, StoreError> {
        let cell = self.scope(scope)?;
        let c = cell.lock().expect("scope cache");
        self.snapshot_locked(scope, &c)
    }

    pub fn timeline(&self, scope: &str) -> Result<Vec<SnapshotEntry>, StoreError> {
        let path = format!("snapshots/{}/timeline.json", file_key(scope));
        match self.backend.read(&path)? {
            Some(raw) => serde_json::from_str(&raw).map_err(|e| corrupt(&path, e)),
            None => Ok(Vec::new()),
        }
    }

    /// Rules as recorded in a snapshot.
    pub fn snapshot_rules(&self, scope: &str, digest: &str) -> Result<Vec<MemoryRule>, StoreError> {
        let path = format!("snapshots/{}/{digest}/memory.json", file_key(scope));
        match self.backend.read(&path)? {
            Some(raw) => serde_json::from_str(&raw).map_err(|e| corrupt(&path, e)),
            None => Ok(Vec::new()),
        }
    }

    pub fn notes(&self, scope: &str) -> Result<Vec<LearningNote>, StoreError> {
        Ok(self.scope(scope)?.lock().expect("scope cache").notes.clone())
    }

    pub fn pending(&self, scope: &str) -> Result<u64, StoreError> {
        let cell = self.scope(scope)?;
        let c = cell.lock().expect("scope cache");
        Ok(c.notes.len() as u64 - c.watermark)
    }

    pub fn memory(&self, scope: &str) -> Result<MemoryState, StoreError> {
        Ok(self.scope(scope)?.lock().expect("scope cache").memory.clone())
    }

    pub fn memory_fingerprint(&self, scope: &str) -> Result<Option<String>, StoreError> {
        Ok(self.backend.read(&format!("fingerprints/{}", file_key(scope)))?.map(|s| s.trim().to_string()))
    }

    /// Injectable rules whose applicability matches, skills, decision skills
    /// and tool notes for the selected rules' preferred tools.
    pub fn retrieve(&self, scope: &str, fp: &SampleFingerprint) -> Result<Selection, StoreError> {
        let soul = self.soul()?;
        let key = file_key(scope);
        let memory = self.memory(scope)?;
        let mut rules: Vec<MemoryRule> =
            memory.rules.into_iter().filter(|r| r.injectable && matches(&r.applicability, fp)).collect();
        rules.sort_by(|a, b| b.confidence.total_cmp(&a.confidence).then(a.id.cmp(&b.id)));
        if rules.is_empty() {
            return Ok(Selection::empty(soul));
        }
        let mut tool_notes = BTreeMap::new();
        for t in rules.iter().flat_map(|r| r.preferred_tools.iter()) {
            if let Some(n) = self.tool_note(t, scope)? {
                tool_notes.insert(t.clone(), n);
            }
        }
        Ok(Selection {
            soul,
            rules,
            skills: self.backend.read(&format!("skills/{key}.md"))?,
            skills_decision: self.backend.read(&format!("skills_decision/{key}.md"))?,
            tool_notes,
        })
    }

    /// Scopes with notes or memory on record.
    pub fn scopes(&self) -> Result<Vec<String>, StoreError> {
        let mut out = BTreeSet::new();
        for (prefix, suffix) in [("notes/", ".md"), ("memory/", ".json")] {
            for p in self.backend.list(prefix)? {
                if let Some(s) = p.strip_prefix(prefix).and_then(|p| p.strip_suffix(suffix)) {
                    if !s.ends_with(".state") {
                        out.insert(s.to_string());
                    }
                }
            }
        }
        out.extend(self.scopes.lock().expect("scope map").keys().cloned());
        Ok(out.into_iter().collect())
    }

    pub fn append_history(&self, scope: &str, record: &Value) -> Result<(), StoreError> {
        self.backend.append(&format!("history/{}.jsonl", file_key(scope)), &format!("{record}\n"))
    }

    pub fn history(&self, scope: &str) -> Result<Vec<Value>, StoreError> {
        let path = format!("history/{}.jsonl", file_key(scope));
        let raw = self.backend.read(&path)?.unwrap_or_default();
        raw.lines().filter(|l| !l.trim().is_empty()).map(|l| serde_json::from_str(l).map_err(|e| corrupt(&path, e))).collect()
    }

    pub fn report(&self, scope: &str) -> Result<ScopeReport, StoreError> {
        let cell = self.scope(scope)?;
        let (notes, pending, m) = {
            let c = cell.lock().expect("scope cache");
            (c.notes.len() as u64, c.notes.len() as u64 - c.watermark, c.memory.clone())
        };
        let injectable = m.rules.iter().filter(|r| r.injectable).count();
        Ok(ScopeReport {
            scope: scope.to_string(),
            notes,
            pending_notes: pending,
            rules: m.rules.len(),
            injectable_rules: injectable,
            injectable_fraction: if m.rules.is_empty() { 0.0 } else { injectable as f64 / m.rules.len() as f64 },
            conflicts_open: m.open_conflicts().count(),
            conflicts_total: m.conflicts.len(),
            snapshots: self.timeline(scope)?,
            entropy_history: self.history(scope)?,
        })
    }

    /// Every file in the store, sorted by path.
    pub fn files(&self) -> Result<Vec<(String, String)>, StoreError> {
        self.backend
            .list("")?
            .into_iter()
            .filter(|p| !p.ends_with(".tmp~"))
            .map(|p| Ok((p.clone(), self.backend.read(&p)?.unwrap_or_default())))
            .collect()
    }

    /// Digest over every path and byte in the store.
    pub fn tree_digest(&self) -> Result<String, StoreError> {
        let files = self.files()?;
        let parts: Vec<(&str, &str)> = files.iter().map(|(k, v)| (k.as_str(), v.as_str())).collect();
        Ok(sha(&parts))
    }
}

fn parse_sections(raw: &str) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    let mut current: Option<(String, Vec<&str>)> = None;
    for line in raw.lines() {
        if let Some(s) = line.strip_prefix("## Scope: ") {
            if let Some((k, v)) = current.take() {
                out.insert(k, v.join("\n").trim().to_string());
            }
            current = Some((s.trim().to_string(), Vec::new()));
        } else if let Some((_, v)) = current.as_mut() {
            v.push(line);
        }
    }
    if let Some((k, v)) = current {
        out.insert(k, v.join("\n").trim().to_string());
    }
    out
}

fn ranked(m: &MemoryState) -> Vec<&MemoryRule> {
    let mut live: Vec<&MemoryRule> = m.rules.iter().filter(|r| r.injectable).collect();
    live.sort_by(|a, b| b.confidence.total_cmp(&a.confidence).then(a.id.cmp(&b.id)));
    live
}

fn render_skills(scope: &str, m: &MemoryState) -> String {
    let mut s = format!("# Skills: {scope}\n\n1. Read the sample fingerprint: seasonality, trend class, boundary events.\n");
    let mut step = 2;
    for r in ranked(m) {
        let when = r.applicability.describe();
        let line = match r.kind {
            RuleKind::Avoidance => format!(
                "{step}. When {when}, skip {} unless nothing else applies. (M{})\n",
                r.avoided_tools.iter().cloned().collect::<Vec<_>>().join(", "),
                r.id
            ),
            _ => format!(
                "{step}. When {when}, run {} first{}. (M{})\n",
                r.preferred_tools.iter().cloned().collect::<Vec<_>>().join(", "),
                if r.avoided_tools.is_empty() {
                    String::new()
                } else {
                    format!(" and treat {} as the weaker option", r.avoided_tools.iter().cloned().collect::<Vec<_>>().join(", "))
                },
                r.id
            ),
        };
        s.push_str(&line);
        step += 1;
    }
    s.push_str(&format!("{step}. Answer in the required output format.\n"));
    s
}

fn render_decisions(scope: &str, m: &MemoryState) -> String {
    let mut s = format!("# Decision Skills: {scope}\n\n");
    let live = ranked(m);
    if live.is_empty() {
        s.push_str("- no settled decisions yet\n");
    }
    for r in live {
        let pre = r.preferred_tools.iter().cloned().collect::<Vec<_>>().join(", ");
        let avo = r.avoided_tools.iter().cloned().collect::<Vec<_>>().join(", ");
        let mut line = format!("- if {}:", r.applicability.describe());
        if !pre.is_empty() {
            line.push_str(&format!(" choose {pre}"));
        }
        if !avo.is_empty() {
            line.push_str(&format!("{}avoid {avo}", if pre.is_empty() { " " } else { "; " }));
        }
        line.push_str(&format!(" (confidence {:.2})\n", r.confidence));
        s.push_str(&line);
    }
    s
}
