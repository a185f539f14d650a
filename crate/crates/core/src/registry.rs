//! Tool descriptors, per-scope usage accounting, frequency-aware keep
//! probabilities and slot-local visible subsets for exploration branches.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use globset::Glob;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Bucket for usage of tools the registry does not know.
pub const UNKNOWN_TOOL: &str = "unknown";

/// Default dropout strength.
pub const DEFAULT_ALPHA: f64 = 1.0;

/// Minimum surviving non-protected competitors per category.
pub const COMPETITOR_FLOOR: usize = 2;

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("alpha must be positive, got {0}")]
    NonPositiveAlpha(f64),
    #[error("invalid scope pattern {pattern:?}: {message}")]
    BadPattern { pattern: String, message: String },
    #[error("duplicate tool id {0}")]
    DuplicateTool(String),
    #[error("visible tool universe is empty")]
    EmptyUniverse,
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("malformed json in {path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToolCategory {
    Forecasting,
    Analysis,
    Text,
    ExplorationOnly,
    Orchestration,
}

impl ToolCategory {
    /// Task-facing categories are the ones that count as substantive usage
    /// and stay visible at inference.
    pub fn is_task_facing(self) -> bool {
        !matches!(self, ToolCategory::ExplorationOnly | ToolCategory::Orchestration)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Numeric,
    Text,
    Mixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArgKind {
    Integer,
    Number,
    String,
    Boolean,
    Object,
    Array,
    /// Any JSON value.
    Any,
}

impl ArgKind {
    fn accepts(self, v: &Value) -> bool {
        match self {
            ArgKind::Integer => v.as_i64().is_some() || v.as_u64().is_some(),
            ArgKind::Number => v.is_number(),
            ArgKind::String => v.is_string(),
            ArgKind::Boolean => v.is_boolean(),
            ArgKind::Object => v.is_object(),
            ArgKind::Array => v.is_array(),
            ArgKind::Any => true,
        }
    }

    fn json_type(self) -> Option<&'static str> {
        Some(match self {
            ArgKind::Integer => "integer",
            ArgKind::Number => "number",
            ArgKind::String => "string",
            ArgKind::Boolean => "boolean",
            ArgKind::Object => "object",
            ArgKind::Array => "array",
            ArgKind::Any => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArgSpec {
    pub name: String,
    pub kind: ArgKind,
    #[serde(default)]
    pub required: bool,
    #[serde(default)]
    pub description: String,
}

impl ArgSpec {
    pub fn required(name: &str, kind: ArgKind, description: &str) -> Self {
        Self { name: name.into(), kind, required: true, description: description.into() }
    }

    pub fn optional(name: &str, kind: ArgKind, description: &str) -> Self {
        Self { name: name.into(), kind, required: false, description: description.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SchemaError {
    #[error("arguments must be a JSON object")]
    NotAnObject,
    #[error("missing required argument {0:?}")]
    Missing(String),
    #[error("argument {name:?} should be {expected:?}")]
    WrongType { name: String, expected: ArgKind },
    #[error("unexpected argument {0:?}")]
    Unexpected(String),
}

fn default_active() -> Vec<String> {
    vec!["*".to_string()]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolDescriptor {
    pub tool_id: String,
    pub category: ToolCategory,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub arg_schema: Vec<ArgSpec>,
    pub modality: Modality,
    /// Scope globs under which the tool bypasses dropout.
    #[serde(default)]
    pub protected_in: Vec<String>,
    /// Scope globs under which the tool is offered at all.
    #[serde(default = "default_active")]
    pub active_in: Vec<String>,
}

fn glob_match(patterns: &[String], scope: &str) -> bool {
    patterns.iter().any(|p| {
        if p == "*" || p == scope {
            return true;
        }
        Glob::new(p).map(|g| g.compile_matcher().is_match(scope)).unwrap_or(false)
    })
}

impl ToolDescriptor {
    pub fn new(tool_id: &str, category: ToolCategory, modality: Modality, description: &str) -> Self {
        Self {
            tool_id: tool_id.into(),
            category,
            description: description.into(),
            arg_schema: Vec::new(),
            modality,
            protected_in: Vec::new(),
            active_in: default_active(),
        }
    }

    pub fn arg(mut self, spec: ArgSpec) -> Self {
        self.arg_schema.push(spec);
        self
    }

    pub fn protected_in(mut self, pattern: &str) -> Self {
        self.protected_in.push(pattern.into());
        self
    }

    pub fn is_substantive(&self) -> bool {
        self.category.is_task_facing()
    }

    pub fn is_protected(&self, scope: &str) -> bool {
        glob_match(&self.protected_in, scope)
    }

    pub fn is_active(&self, scope: &str) -> bool {
        glob_match(&self.active_in, scope)
    }

    /// Checks that every scope pattern compiles.
    pub fn check_patterns(&self) -> Result<(), RegistryError> {
        for p in self.protected_in.iter().chain(&self.active_in) {
            Glob::new(p).map_err(|e| RegistryError::BadPattern {
                pattern: p.clone(),
                message: e.to_string(),
            })?;
        }
        Ok(())
    }

    /// Validates call arguments. `inputs` is accepted on every tool.
    pub fn validate_args(&self, args: &Value) -> Result<(), SchemaError> {
        let empty = serde_json::Map::new();
        let obj = match args {
            Value::Null => &empty,
            Value::Object(m) => m,
            _ => return Err(SchemaError::NotAnObject),
        };
        for spec in &self.arg_schema {
            match obj.get(&spec.name) {
                None | Some(Value::Null) if spec.required => {
                    return Err(SchemaError::Missing(spec.name.clone()))
                }
                Some(v) if !v.is_null() && !spec.kind.accepts(v) => {
                    return Err(SchemaError::WrongType { name: spec.name.clone(), expected: spec.kind })
                }
                _ => {}
            }
        }
        if let Some(extra) = obj
            .keys()
            .find(|k| k.as_str() != "inputs" && !self.arg_schema.iter().any(|s| &s.name == *k))
        {
            return Err(SchemaError::Unexpected(extra.clone()));
        }
        Ok(())
    }

    /// JSON-schema rendering used for declared tools.
    pub fn json_schema(&self) -> Value {
        let mut props = serde_json::Map::new();
        let mut required = Vec::new();
        for spec in &self.arg_schema {
            let mut p = serde_json::Map::new();
            if let Some(t) = spec.kind.json_type() {
                p.insert("type".into(), Value::String(t.into()));
            }
            if !spec.description.is_empty() {
                p.insert("description".into(), Value::String(spec.description.clone()));
            }
            props.insert(spec.name.clone(), Value::Object(p));
            if spec.required {
                required.push(Value::String(spec.name.clone()));
            }
        }
        serde_json::json!({"type": "object", "properties": props, "required": required})
    }
}

/// Mode a tool set is resolved for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Exploration,
    Inference,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ToolRegistry {
    tools: Vec<ToolDescriptor>,
}

impl ToolRegistry {
    pub fn new(tools: Vec<ToolDescriptor>) -> Result<Self, RegistryError> {
        let mut seen = BTreeSet::new();
        for t in &tools {
            if !seen.insert(t.tool_id.clone()) {
                return Err(RegistryError::DuplicateTool(t.tool_id.clone()));
            }
            t.check_patterns()?;
        }
        Ok(Self { tools })
    }

    pub fn load(path: &Path) -> Result<Self, RegistryError> {
        let raw = fs::read_to_string(path).map_err(|source| RegistryError::Io { path: path.into(), source })?;
        let tools = serde_json::from_str(&raw).map_err(|source| RegistryError::Json { path: path.into(), source })?;
        Self::new(tools)
    }

    pub fn save(&self, path: &Path) -> Result<(), RegistryError> {
        let raw = serde_json::to_string_pretty(&self.tools).expect("descriptors serialize");
        fs::write(path, raw).map_err(|source| RegistryError::Io { path: path.into(), source })
    }

    pub fn add(&mut self, tool: ToolDescriptor) -> Result<(), RegistryError> {
        if self.get(&tool.tool_id).is_some() {
            return Err(RegistryError::DuplicateTool(tool.tool_id));
        }
        tool.check_patterns()?;
        self.tools.push(tool);
        Ok(())
    }

    pub fn get(&self, tool_id: &str) -> Option<&ToolDescriptor> {
        self.tools.iter().find(|t| t.tool_id == tool_id)
    }

    pub fn tools(&self) -> &[ToolDescriptor] {
        &self.tools
    }

    /// Tools offered under `scope` in `mode`. Inference drops every
    /// exploration-only and orchestration tool.
    pub fn visible(&self, scope: &str, mode: Mode) -> Vec<&ToolDescriptor> {
        self.tools
            .iter()
            .filter(|t| t.is_active(scope))
            .filter(|t| mode == Mode::Exploration || t.category.is_task_facing())
            .collect()
    }

    pub fn visible_ids(&self, scope: &str, mode: Mode) -> BTreeSet<String> {
        self.visible(scope, mode).into_iter().map(|t| t.tool_id.clone()).collect()
    }
}

/// Frequency-aware keep probability `((1 + n_min) / (1 + n_i))^alpha`;
/// protected tools always stay.
pub fn keep_probability(n_i: u64, n_min: u64, alpha: f64, protected: bool) -> Result<f64, RegistryError> {
    if !(alpha > 0.0) {
        return Err(RegistryError::NonPositiveAlpha(alpha));
    }
    if protected || n_i <= n_min {
        return Ok(1.0);
    }
    Ok(((1.0 + n_min as f64) / (1.0 + n_i as f64)).powf(alpha))
}

/// Shannon entropy (natural log) of a count vector; `None` when all zero.
pub fn entropy_of(counts: impl IntoIterator<Item = u64>) -> Option<f64> {
    let counts: Vec<u64> = counts.into_iter().filter(|c| *c > 0).collect();
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return None;
    }
    let total = total as f64;
    Some(
        counts
            .iter()
            .map(|&c| {
                let p = c as f64 / total;
                -p * p.ln()
            })
            .sum::<f64>()
            .max(0.0),
    )
}

/// Share of the `k` largest counts in the total; `None` when all zero.
pub fn top_k_share_of(counts: impl IntoIterator<Item = u64>, k: usize) -> Option<f64> {
    let mut counts: Vec<u64> = counts.into_iter().collect();
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return None;
    }
    counts.sort_unstable_by(|a, b| b.cmp(a));
    let top: u64 = counts.iter().take(k).sum();
    Some(top as f64 / total as f64)
}

/// Fraction of the visible universe invoked at least once in the prefix.
pub fn coverage_rate(universe: &BTreeSet<String>, prefix: &[BTreeSet<String>]) -> Result<f64, RegistryError> {
    if universe.is_empty() {
        return Err(RegistryError::EmptyUniverse);
    }
    let used: BTreeSet<&String> =
        prefix.iter().flatten().filter(|t| universe.contains(*t)).collect();
    Ok(used.len() as f64 / universe.len() as f64)
}

/// Per-scope tool invocation counts.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ToolUsageLedger {
    counts: BTreeMap<String, BTreeMap<String, u64>>,
    #[serde(skip)]
    path: Option<PathBuf>,
}

/// What a `record_usage` call changed.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct UsageUpdate {
    pub counted: BTreeMap<String, u64>,
    pub skipped: Vec<String>,
    pub unknown: Vec<String>,
}

impl ToolUsageLedger {
    pub fn new() -> Self {
        Self::default()
    }

    /// Ledger persisted at `path` after each update; loads existing state.
    pub fn open(path: &Path) -> Result<Self, RegistryError> {
        let mut ledger = if path.exists() {
            let raw = fs::read_to_string(path).map_err(|source| RegistryError::Io { path: path.into(), source })?;
            serde_json::from_str(&raw).map_err(|source| RegistryError::Json { path: path.into(), source })?
        } else {
            Self::default()
        };
        ledger.path = Some(path.to_path_buf());
        Ok(ledger)
    }

    pub fn persist(&self) -> Result<(), RegistryError> {
        if let Some(path) = &self.path {
            let raw = serde_json::to_string_pretty(&self.counts).expect("counts serialize");
            fs::write(path, raw + "\n").map_err(|source| RegistryError::Io { path: path.clone(), source })?;
        }
        Ok(())
    }

    pub fn count(&self, scope: &str, tool: &str) -> u64 {
        self.counts.get(scope).and_then(|m| m.get(tool)).copied().unwrap_or(0)
    }

    pub fn scope_counts(&self, scope: &str) -> Option<&BTreeMap<String, u64>> {
        self.counts.get(scope)
    }

    pub fn scopes(&self) -> impl Iterator<Item = &String> {
        self.counts.keys()
    }

    /// Counts each substantive tool; exploration-only and orchestration
    /// tools are skipped, unknown ids land in [`UNKNOWN_TOOL`].
    pub fn record_usage(
        &mut self,
        registry: &ToolRegistry,
        scope: &str,
        tools_used: &[String],
    ) -> Result<UsageUpdate, RegistryError> {
        let mut update = UsageUpdate::default();
        for tool in tools_used {
            let key = match registry.get(tool) {
                Some(d) if !d.is_substantive() => {
                    update.skipped.push(tool.clone());
                    continue;
                }
                Some(_) => tool.as_str(),
                None => {
                    tracing::warn!(tool = %tool, scope = %scope, "usage recorded for unregistered tool");
                    update.unknown.push(tool.clone());
                    UNKNOWN_TOOL
                }
            };
            *update.counted.entry(key.to_string()).or_default() += 1;
        }
        if update.counted.is_empty() {
            return Ok(update);
        }
        let entry = self.counts.entry(scope.to_string()).or_default();
        for (tool, n) in &update.counted {
            *entry.entry(tool.clone()).or_default() += n;
        }
        self.persist()?;
        Ok(update)
    }

    pub fn usage_entropy(&self, scope: &str) -> Option<f64> {
        entropy_of(self.counts.get(scope)?.values().copied())
    }

    pub fn top_k_share(&self, scope: &str, k: usize) -> Option<f64> {
        top_k_share_of(self.counts.get(scope)?.values().copied(), k)
    }
}

fn slot_seed(seed: u64, scope: &str, slot: usize) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(scope.as_bytes());
    h.update((slot as u64).to_le_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

/// Draws the slot-local visible tool set for one exploration branch.
///
/// Non-protected task-facing tools compete within their category: each is
/// kept with its keep probability, and when fewer than
/// [`COMPETITOR_FLOOR`] survive, the lowest-count competitors are added
/// back. Protected, exploration-only and orchestration tools are always
/// visible. The draw is a pure function of the ledger snapshot and
/// `(scope, slot, seed, alpha)`.
pub fn sample_visible_subset(
    registry: &ToolRegistry,
    ledger: &ToolUsageLedger,
    scope: &str,
    slot: usize,
    seed: u64,
    alpha: f64,
) -> Result<BTreeSet<String>, RegistryError> {
    if !(alpha > 0.0) {
        return Err(RegistryError::NonPositiveAlpha(alpha));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(slot_seed(seed, scope, slot));
    let mut visible = BTreeSet::new();
    let mut groups: BTreeMap<ToolCategory, Vec<&ToolDescriptor>> = BTreeMap::new();
    for tool in registry.visible(scope, Mode::Exploration) {
        if !tool.category.is_task_facing() || tool.is_protected(scope) {
            visible.insert(tool.tool_id.clone());
        } else {
            groups.entry(tool.category).or_default().push(tool);
        }
    }
    for (_, mut members) in groups {
        members.sort_by(|a, b| a.tool_id.cmp(&b.tool_id));
        let n_min = members.iter().map(|t| ledger.count(scope, &t.tool_id)).min().unwrap_or(0);
        let mut kept = Vec::new();
        for tool in &members {
            let p = keep_probability(ledger.count(scope, &tool.tool_id), n_min, alpha, false)?;
            let draw: f64 = rng.gen();
            if draw < p {
                kept.push(tool.tool_id.clone());
            }
        }
        let floor = COMPETITOR_FLOOR.min(members.len());
        if kept.len() < floor {
            let mut by_count: Vec<&&ToolDescriptor> = members.iter().collect();
            by_count.sort_by_key(|t| (ledger.count(scope, &t.tool_id), t.tool_id.clone()));
            for t in by_count {
                if kept.len() >= floor {
                    break;
                }
                if !kept.contains(&t.tool_id) {
                    kept.push(t.tool_id.clone());
                }
            }
        }
        visible.extend(kept);
    }
    Ok(visible)
}
