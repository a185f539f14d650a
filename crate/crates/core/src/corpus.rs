//! Corpus ingestion, manifests, learn/eval disjointness, label rebalancing
//! and seeded synthetic families.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use chrono::{Duration, NaiveDate};
use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::model::{Answer, EvaluatorCapability, InstanceRecord, TaskInstance, TaskType};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorpusRole {
    Learning,
    Evaluation,
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: exploration requires targets (lines without ground truth: {lines:?})")]
    MissingTargets { path: PathBuf, lines: Vec<usize> },
    #[error("bad synthetic spec: {0}")]
    Spec(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reject {
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub role: CorpusRole,
    pub counts: BTreeMap<String, usize>,
    /// Digested source identifier per sample id.
    pub sources: BTreeMap<String, String>,
    /// Samples without a declared source, identified by their id instead.
    #[serde(default)]
    pub derived_sources: usize,
}

impl CorpusManifest {
    pub fn new(role: CorpusRole) -> Self {
        Self { role, counts: BTreeMap::new(), sources: BTreeMap::new(), derived_sources: 0 }
    }

    pub fn scopes(&self) -> impl Iterator<Item = &String> {
        self.counts.keys()
    }

    pub fn add(&mut self, inst: &TaskInstance) {
        *self.counts.entry(inst.scope.clone()).or_default() += 1;
        let raw = match &inst.source {
            Some(s) if !s.trim().is_empty() => s.trim().to_string(),
            _ => {
                self.derived_sources += 1;
                format!("id:{}", inst.id)
            }
        };
        self.sources.insert(inst.id.clone(), format!("{}:{}", inst.domain(), source_digest(&raw)));
    }

    /// Source digests grouped by domain.
    pub fn by_domain(&self) -> BTreeMap<String, BTreeSet<String>> {
        let mut out: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        for tagged in self.sources.values() {
            let (domain, digest) = tagged.split_once(':').unwrap_or(("", tagged));
            out.entry(domain.to_string()).or_default().insert(digest.to_string());
        }
        out
    }

    pub fn total(&self) -> usize {
        self.counts.values().sum()
    }
}

pub fn source_digest(raw: &str) -> String {
    hex::encode(&Sha256::digest(raw.as_bytes())[..8])
}

#[derive(Debug, Clone)]
pub struct LoadedCorpus {
    pub instances: Vec<TaskInstance>,
    pub manifest: CorpusManifest,
    pub rejects: Vec<Reject>,
}

/// Parses JSONL text. Malformed lines become rejects with their line number.
pub fn parse_samples(raw: &str, role: CorpusRole) -> LoadedCorpus {
    let mut instances = Vec::new();
    let mut rejects = Vec::new();
    let mut manifest = CorpusManifest::new(role);
    for (i, line) in raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parsed = serde_json::from_str::<InstanceRecord>(line)
            .map_err(|e| e.to_string())
            .and_then(|r| TaskInstance::from_record(r).map_err(|e| e.to_string()));
        match parsed {
            Ok(inst) => {
                manifest.add(&inst);
                instances.push(inst);
            }
            Err(reason) => rejects.push(Reject { line: i + 1, reason }),
        }
    }
    LoadedCorpus { instances, manifest, rejects }
}

/// Loads a corpus file for `role`. Learning corpora must carry ground truth
/// on every accepted sample.
pub fn load_samples(path: &Path, role: CorpusRole) -> Result<LoadedCorpus, CorpusError> {
    let raw = std::fs::read_to_string(path).map_err(|source| CorpusError::Io { path: path.into(), source })?;
    let loaded = parse_samples(&raw, role);
    if role == CorpusRole::Learning {
        let mut lines = Vec::new();
        let mut n = 0;
        for (i, line) in raw.lines().enumerate() {
            if line.trim().is_empty() || loaded.rejects.iter().any(|r| r.line == i + 1) {
                continue;
            }
            if !loaded.instances[n].has_ground_truth() {
                lines.push(i + 1);
            }
            n += 1;
        }
        if !lines.is_empty() {
            return Err(CorpusError::MissingTargets { path: path.into(), lines });
        }
    }
    for r in &loaded.rejects {
        tracing::warn!(path = %path.display(), line = r.line, reason = %r.reason, "corpus line rejected");
    }
    Ok(loaded)
}

/// Serializes instances as JSONL; ground truth only with `with_truth`.
pub fn render_samples(instances: &[TaskInstance], with_truth: bool) -> String {
    let cap = EvaluatorCapability::offline_scorer();
    let mut out = String::new();
    for inst in instances {
        let rec = inst.to_record(with_truth.then_some(&cap));
        out.push_str(&serde_json::to_string(&rec).expect("record serializes"));
        out.push('\n');
    }
    out
}

pub fn write_samples(path: &Path, instances: &[TaskInstance], with_truth: bool) -> Result<(), CorpusError> {
    let io = |source| CorpusError::Io { path: path.into(), source };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io)?;
    }
    std::fs::write(path, render_samples(instances, with_truth)).map_err(|source| CorpusError::Io { path: path.into(), source })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisjointnessReport {
    pub pass: bool,
    /// Shared source digests per domain.
    pub overlap: BTreeMap<String, Vec<String>>,
    pub warnings: Vec<String>,
}

pub fn disjointness_check(learn: &CorpusManifest, eval: &CorpusManifest) -> DisjointnessReport {
    let mut warnings = Vec::new();
    if learn.sources.is_empty() {
        warnings.push("learning manifest is empty".into());
    }
    if eval.sources.is_empty() {
        warnings.push("evaluation manifest is empty".into());
    }
    let (l, e) = (learn.by_domain(), eval.by_domain());
    let mut overlap = BTreeMap::new();
    for (domain, ls) in &l {
        if let Some(es) = e.get(domain) {
            let shared: Vec<String> = ls.intersection(es).cloned().collect();
            if !shared.is_empty() {
                overlap.insert(domain.clone(), shared);
            }
        }
    }
    DisjointnessReport { pass: overlap.is_empty(), overlap, warnings }
}

/// Subsamples over-represented labels so that no label exceeds `band`
/// times the rarest present label. Sample content and order are kept.
pub fn rebalance_labels(samples: &[TaskInstance], scope: &str, band: f64, seed: u64) -> (Vec<TaskInstance>, Vec<String>) {
    let cap = EvaluatorCapability::offline_scorer();
    let mut warnings = Vec::new();
    let mut by_label: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, s) in samples.iter().enumerate().filter(|(_, s)| s.scope == scope) {
        if let Ok(Answer::Label(l)) = s.ground_truth(&cap) {
            by_label.entry(l.clone()).or_default().push(i);
        }
    }
    if let Some(space) = samples.iter().find(|s| s.scope == scope).and_then(|s| s.label_space.clone()) {
        for l in space.iter().filter(|l| !by_label.contains_key(*l)) {
            warnings.push(format!("label {l} has no samples in {scope}"));
        }
    }
    if by_label.len() < 2 {
        warnings.push(format!("scope {scope} has fewer than two labels; nothing to rebalance"));
        return (samples.to_vec(), warnings);
    }
    let min = by_label.values().map(Vec::len).min().unwrap_or(0);
    let limit = ((band * min as f64).floor() as usize).max(min);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dropped = BTreeSet::new();
    for idx in by_label.values() {
        if idx.len() > limit {
            let keep: BTreeSet<usize> = sample_indices(&mut rng, idx.len(), limit).into_iter().collect();
            dropped.extend(idx.iter().enumerate().filter(|(k, _)| !keep.contains(k)).map(|(_, i)| *i));
        }
    }
    let out = samples.iter().enumerate().filter(|(i, _)| !dropped.contains(i)).map(|(_, s)| s.clone()).collect();
    (out, warnings)
}

// ---------------------------------------------------------------------------
// Synthetic families

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    /// Sine plus noise; the seasonal carry-forward beats the last value.
    Seasonal,
    /// Linear trend plus noise; drift beats the last value.
    Trending,
    /// Hourly series labelled by the day-mean change rule.
    TrendLabel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FamilySpec {
    pub family: Family,
    pub count: usize,
    pub domain: String,
    pub period: usize,
    pub cycles: usize,
    pub horizon: usize,
    pub amplitude: f64,
    pub noise: f64,
    pub slope: f64,
}

impl Default for FamilySpec {
    fn default() -> Self {
        Self {
            family: Family::Seasonal,
            count: 50,
            domain: "energy".into(),
            period: 24,
            cycles: 4,
            horizon: 12,
            amplitude: 10.0,
            noise: 1.0,
            slope: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub families: Vec<FamilySpec>,
    #[serde(default)]
    pub seed: u64,
    /// Prefix that keeps ids and sources of separate corpora apart.
    #[serde(default = "default_tag")]
    pub tag: String,
}

fn default_tag() -> String {
    "syn".into()
}

pub const TREND_LABELS: [&str; 3] = ["increasing", "decreasing", "stable"];
pub const TREND_DELTA: f64 = 0.5;

pub fn horizon_class(horizon: usize) -> &'static str {
    match horizon {
        0..=8 => "short",
        9..=48 => "mid",
        _ => "long",
    }
}

pub fn scope_key(domain: &str, task: TaskType, horizon: usize) -> String {
    format!("{domain}_{}_{}", task.as_str(), horizon_class(horizon))
}

/// Mean of the last `day` points minus the mean of the `day` before them.
pub fn day_mean_delta(series: &[f64], day: usize) -> Option<f64> {
    let n = series.len();
    if day == 0 || n < 2 * day {
        return None;
    }
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    Some(mean(&series[n - day..]) - mean(&series[n - 2 * day..n - day]))
}

pub fn label_for_delta(delta: f64) -> &'static str {
    if delta > TREND_DELTA {
        "increasing"
    } else if delta < -TREND_DELTA {
        "decreasing"
    } else {
        "stable"
    }
}

fn round3(x: f64) -> f64 {
    (x * 1000.0).round() / 1000.0
}

fn hourly(n: usize, offset_days: i64) -> Vec<String> {
    let start = NaiveDate::from_ymd_opt(2024, 1, 1).expect("valid date").and_hms_opt(0, 0, 0).expect("valid time")
        + Duration::days(offset_days);
    (0..n).map(|i| (start + Duration::hours(i as i64)).format("%Y-%m-%dT%H:%M:%S").to_string()).collect()
}

fn family_name(f: Family) -> &'static str {
    match f {
        Family::Seasonal => "seasonal",
        Family::Trending => "trending",
        Family::TrendLabel => "trend_label",
    }
}

fn family_seed(seed: u64, tag: &str, index: usize) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(tag.as_bytes());
    h.update((index as u64).to_le_bytes());
    u64::from_le_bytes(h.finalize()[..8].try_into().expect("8 bytes"))
}

fn generate_family(spec: &FamilySpec, index: usize, tag: &str, seed: u64) -> Result<Vec<TaskInstance>, CorpusError> {
    if spec.period < 2 || spec.cycles < 2 {
        return Err(CorpusError::Spec(format!("family {index}: period and cycles must be at least 2")));
    }
    if spec.noise < 0.0 {
        return Err(CorpusError::Spec(format!("family {index}: noise must be non-negative")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(family_seed(seed, tag, index));
    let noise = Normal::new(0.0, spec.noise).map_err(|e| CorpusError::Spec(e.to_string()))?;
    let name = family_name(spec.family);
    let p = spec.period;
    let mut out = Vec::with_capacity(spec.count);
    for i in 0..spec.count {
        let id = format!("{tag}_{}_{name}_{i:04}", spec.domain);
        let source = format!("{tag}/{}/{name}/{seed}/{i}", spec.domain);
        let level: f64 = rng.gen_range(20.0..80.0);
        let inst = match spec.family {
            Family::Seasonal | Family::Trending => {
                let n = p * spec.cycles;
                let h = spec.horizon.max(1);
                let phase: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
                let (amp, slope) = match spec.family {
                    Family::Seasonal => (spec.amplitude * rng.gen_range(0.8..1.2), 0.0),
                    _ => (0.0, spec.slope * rng.gen_range(0.5..1.5) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 }),
                };
                let values: Vec<f64> = (0..n + h)
                    .map(|t| {
                        let tt = t as f64;
                        round3(level + slope * tt + amp * (std::f64::consts::TAU * tt / p as f64 + phase).sin() + noise.sample(&mut rng))
                    })
                    .collect();
                TaskInstance::new(&id, values[..n].to_vec(), TaskType::Forecast, h, scope_key(&spec.domain, TaskType::Forecast, h))
                    .with_timestamps(hourly(n, i as i64))
                    .with_ground_truth(Answer::Numeric(values[n..].to_vec()))
            }
            Family::TrendLabel => {
                let n = p * spec.cycles;
                let target: f64 = rng.gen_range(-3.0..3.0);
                let phase: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
                let values: Vec<f64> = (0..n)
                    .map(|t| {
                        let shift = if t >= n - p { target } else { 0.0 };
                        let tt = t as f64;
                        round3(level + shift + spec.amplitude * (std::f64::consts::TAU * tt / p as f64 + phase).sin() + noise.sample(&mut rng))
                    })
                    .collect();
                let delta = day_mean_delta(&values, p).expect("two days present");
                let label = label_for_delta(delta);
                TaskInstance::new(&id, values, TaskType::TrendPast, 1, scope_key(&spec.domain, TaskType::TrendPast, 1))
                    .with_labels(&TREND_LABELS)
                    .with_timestamps(hourly(n, i as i64))
                    .with_ground_truth(Answer::Label(label.to_string()))
            }
        };
        let mut inst = inst;
        inst.source = Some(source);
        out.push(inst);
    }
    Ok(out)
}

/// Deterministic per `(spec, seed)`. The spec's own seed is ignored in
/// favour of the explicit one.
pub fn generate_synthetic_corpus(spec: &SyntheticSpec, seed: u64) -> Result<Vec<TaskInstance>, CorpusError> {
    let mut out = Vec::new();
    for (i, f) in spec.families.iter().enumerate() {
        out.extend(generate_family(f, i, &spec.tag, seed)?);
    }
    Ok(out)
}

/// Short text summary of a manifest, one scope per line.
pub fn describe_manifest(m: &CorpusManifest) -> String {
    let mut s = String::new();
    for (scope, n) in &m.counts {
        let _ = writeln!(s, "{scope}: {n}");
    }
    s
}
