use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use eel_core::corpus::{generate_synthetic_corpus, load_samples, write_samples, CorpusRole, FamilySpec, SyntheticSpec};
use eel_core::orchestrator::Trace;
use eel_core::registry::{entropy_of, top_k_share_of};
use eel_core::replay::{lint as lint_trace, replay as replay_trace};
use eel_core::runner::{known_counts, parse_predictions, read_ledger, render_predictions, score_predictions, summary_value};
use eel_core::simulate::{render_csv, simulate_dropout, DropoutScenario};
use eel_core::{Engine, ExperienceStore, RunConfig, TaskInstance, Toolkit};

use crate::gateway::GatewayArgs;
use crate::{EngineArgs, Failure};

fn read_json<T: serde::de::DeserializeOwned>(path: &Path, what: &str) -> Result<T, Failure> {
    let raw = std::fs::read_to_string(path).map_err(|e| Failure::config(format!("cannot read {what} {}: {e}", path.display())))?;
    serde_json::from_str(&raw).map_err(|e| Failure::config(format!("bad {what} {}: {e}", path.display())))
}

fn write_file(path: &Path, body: &str) -> Result<(), Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Failure::config(format!("cannot create {}: {e}", dir.display())))?;
    }
    std::fs::write(path, body).map_err(|e| Failure::config(format!("cannot write {}: {e}", path.display())))
}

fn pretty(v: &Value) -> String {
    serde_json::to_string_pretty(v).expect("json values serialize") + "\n"
}

fn emit(v: &Value) {
    print!("{}", pretty(v));
}

fn run_config(args: &EngineArgs) -> Result<RunConfig, Failure> {
    let mut cfg: RunConfig = match &args.config {
        Some(p) => read_json(p, "config")?,
        None => RunConfig::default(),
    };
    let x = &mut cfg.exploration;
    if let Some(v) = args.seed {
        x.seed = v;
    }
    if let Some(v) = args.alpha {
        x.alpha = v;
    }
    if let Some(v) = args.branch_slots {
        x.branch_slots = v;
    }
    if let Some(v) = args.max_steps {
        x.max_steps = v;
        cfg.inference_max_steps = v;
    }
    if let Some(v) = args.parallel {
        cfg.parallel = v;
    }
    Ok(cfg)
}

fn corpus(path: &Path, role: CorpusRole) -> Result<(Vec<TaskInstance>, usize), Failure> {
    match load_samples(path, role) {
        Ok(c) => {
            if c.instances.is_empty() {
                return Err(Failure::config(format!("{}: no usable samples", path.display())));
            }
            Ok((c.instances, c.rejects.len()))
        }
        Err(e) => Err(Failure::config(e.to_string())),
    }
}

fn store_err(e: impl std::fmt::Display) -> Failure {
    Failure::config(format!("store: {e}"))
}

pub fn explore(
    corpus_path: &Path,
    store_root: &Path,
    args: &EngineArgs,
    gw: &GatewayArgs,
    trace_dir: Option<&Path>,
    out: &Path,
) -> Result<(), Failure> {
    let cfg = run_config(args)?;
    let (instances, rejects) = corpus(corpus_path, CorpusRole::Learning)?;
    let gateway = gw.open()?;
    let kit = Toolkit::builtin();
    let store = ExperienceStore::open(store_root).map_err(store_err)?;
    let mut engine = Engine::new(&kit, gateway.backend(), &store, cfg).map_err(|e| Failure::config(e.to_string()))?;
    if let Some(d) = trace_dir {
        engine = engine.with_trace_dir(d);
    }
    let summary = engine.explore(&instances).map_err(|e| Failure::config(e.to_string()))?;
    gateway.finish()?;
    let mut v = summary_value(&summary);
    v["corpus_rejects"] = json!(rejects);
    v["store_digest"] = json!(store.tree_digest().map_err(store_err)?);
    write_file(&out.join("run_summary.json"), &pretty(&v))?;
    emit(&v);
    if summary.failed_instances > 0 {
        return Err(Failure::partial(format!("{} of {} episodes failed", summary.failed_instances, summary.episodes)));
    }
    Ok(())
}

pub fn infer(
    corpus_path: &Path,
    store_root: &Path,
    args: &EngineArgs,
    gw: &GatewayArgs,
    trace_dir: Option<&Path>,
    out: &Path,
) -> Result<(), Failure> {
    let cfg = run_config(args)?;
    let (instances, rejects) = corpus(corpus_path, CorpusRole::Evaluation)?;
    let gateway = gw.open()?;
    let kit = Toolkit::builtin();
    let missing = !store_root.join("soul.md").exists();
    let store = if missing { ExperienceStore::in_memory() } else { ExperienceStore::open(store_root).map_err(store_err)? };
    let before = store.tree_digest().map_err(store_err)?;
    let seed = cfg.exploration.seed;
    let digest = cfg.digest();
    let mut engine = Engine::new(&kit, gateway.backend(), &store, cfg).map_err(|e| Failure::config(e.to_string()))?;
    if let Some(d) = trace_dir {
        engine = engine.with_trace_dir(d);
    }
    let preds = engine.infer(&instances).map_err(|e| Failure::partial(e.to_string()))?;
    gateway.finish()?;
    let after = store.tree_digest().map_err(store_err)?;
    if before != after {
        return Err(Failure { code: 1, message: "store changed during inference".into() });
    }
    write_file(out, &render_predictions(&preds))?;
    emit(&json!({
        "seed": seed,
        "config_digest": digest,
        "gateway": gateway.backend().name(),
        "predictions": preds.len(),
        "degraded": preds.iter().filter(|p| p.degraded).count(),
        "corpus_rejects": rejects,
        "store_missing": missing,
        "store_digest": after,
        "out": out.display().to_string(),
    }));
    Ok(())
}

pub fn eval(predictions: &Path, corpus_path: &Path, thresholds: Option<&Path>, out: &Path) -> Result<(), Failure> {
    let raw = std::fs::read_to_string(predictions).map_err(|e| Failure::config(format!("cannot read {}: {e}", predictions.display())))?;
    let preds = parse_predictions(&raw).map_err(|e| Failure::config(format!("{}: {e}", predictions.display())))?;
    let (instances, _) = corpus(corpus_path, CorpusRole::Evaluation)?;
    let thresholds: BTreeMap<String, f64> = match thresholds {
        Some(p) => read_json(p, "threshold file")?,
        None => BTreeMap::new(),
    };
    let report = score_predictions(&preds, &instances, &thresholds);
    let v = serde_json::to_value(&report).expect("report serializes");
    write_file(out, &pretty(&v))?;
    emit(&v);
    Ok(())
}

pub fn simulate(scenario: Option<&Path>, seed: u64, seeds: u64, alpha: Option<f64>, out: &Path) -> Result<(), Failure> {
    let mut sc: DropoutScenario = match scenario {
        Some(p) => read_json(p, "scenario")?,
        None => DropoutScenario::biased(),
    };
    if let Some(a) = alpha {
        sc.alpha = a;
    }
    if sc.tools.is_empty() || sc.slots == 0 {
        return Err(Failure::config("scenario needs tools and at least one slot"));
    }
    let list: Vec<u64> = (seed..seed + seeds.max(1)).collect();
    let d = simulate_dropout(&sc, &list).map_err(|e| Failure::config(e.to_string()))?;
    write_file(&out.join("dropout_diag.csv"), &render_csv(&d))?;
    let v = serde_json::to_value(&d).expect("diagnostics serialize");
    write_file(&out.join("dropout_diag.json"), &pretty(&v))?;
    emit(&json!({
        "seeds": d.seeds,
        "alpha": d.alpha,
        "mean_top_k_on": d.mean_top_k_on,
        "mean_top_k_off": d.mean_top_k_off,
        "csv": out.join("dropout_diag.csv").display().to_string(),
    }));
    Ok(())
}

pub fn report(store_root: &Path, out: Option<&Path>) -> Result<(), Failure> {
    if !store_root.is_dir() {
        return Err(Failure::config(format!("no store at {}", store_root.display())));
    }
    let store = ExperienceStore::open(store_root).map_err(store_err)?;
    let ledger = read_ledger(store_root).map_err(|e| Failure::config(e.to_string()))?;
    let mut scopes = Vec::new();
    let (mut notes, mut rules, mut conflicts) = (0, 0, 0);
    for s in store.scopes().map_err(store_err)? {
        let r = store.report(&s).map_err(store_err)?;
        notes += r.notes;
        rules += r.rules;
        conflicts += r.conflicts_total;
        let counts = known_counts(&ledger, &s);
        let mut v = serde_json::to_value(&r).expect("report serializes");
        v["usage"] = json!({
            "counts": counts,
            "entropy": entropy_of(counts.values().copied()),
            "top_5_share": top_k_share_of(counts.values().copied(), 5),
        });
        scopes.push(v);
    }
    let v = json!({
        "store": store_root.display().to_string(),
        "tree_digest": store.tree_digest().map_err(store_err)?,
        "totals": {"scopes": scopes.len(), "notes": notes, "rules": rules, "conflicts": conflicts},
        "scopes": scopes,
    });
    if let Some(p) = out {
        write_file(p, &pretty(&v))?;
    }
    emit(&v);
    Ok(())
}

pub fn gen_corpus(spec: Option<&Path>, count: usize, seed: u64, tag: &str, truth: bool, out: &Path) -> Result<(), Failure> {
    let spec: SyntheticSpec = match spec {
        Some(p) => read_json(p, "synthetic spec")?,
        None => SyntheticSpec { families: vec![FamilySpec { count, ..FamilySpec::default() }], seed, tag: tag.into() },
    };
    let samples = generate_synthetic_corpus(&spec, spec.seed).map_err(|e| Failure::config(e.to_string()))?;
    write_samples(out, &samples, truth).map_err(|e| Failure::config(e.to_string()))?;
    let mut scopes: BTreeMap<&str, usize> = BTreeMap::new();
    for s in &samples {
        *scopes.entry(s.scope.as_str()).or_default() += 1;
    }
    emit(&json!({"samples": samples.len(), "scopes": scopes, "with_truth": truth, "out": out.display().to_string()}));
    Ok(())
}

fn truth_index(corpus_path: Option<&Path>) -> Result<BTreeMap<String, TaskInstance>, Failure> {
    let Some(p) = corpus_path else { return Ok(BTreeMap::new()) };
    let (instances, _) = corpus(p, CorpusRole::Evaluation)?;
    Ok(instances.into_iter().map(|i| (i.id.clone(), i)).collect())
}

fn load_trace(path: &PathBuf) -> Result<(String, Trace), Failure> {
    let raw = std::fs::read_to_string(path).map_err(|e| Failure::config(format!("cannot read {}: {e}", path.display())))?;
    let trace = Trace::parse(&raw).map_err(|e| Failure::config(format!("{}: {e}", path.display())))?;
    Ok((raw, trace))
}

pub fn replay(traces: &[PathBuf], corpus_path: Option<&Path>) -> Result<(), Failure> {
    let truth = truth_index(corpus_path)?;
    let kit = Toolkit::builtin();
    let mut dirty = 0;
    let mut out = Vec::new();
    for path in traces {
        let (_, trace) = load_trace(path)?;
        let report = replay_trace(&trace, &kit, truth.get(&trace.header.instance.id))
            .map_err(|e| Failure::config(format!("{}: {e}", path.display())))?;
        if !report.clean() {
            dirty += 1;
        }
        out.push(json!({"trace": path.display().to_string(), "report": report}));
    }
    emit(&json!({"traces": out.len(), "divergent": dirty, "results": out}));
    if dirty > 0 {
        return Err(Failure::partial(format!("{dirty} of {} traces diverged", traces.len())));
    }
    Ok(())
}

pub fn lint(traces: &[PathBuf], corpus_path: Option<&Path>) -> Result<(), Failure> {
    let truth = truth_index(corpus_path)?;
    let mut dirty = 0;
    let mut out = Vec::new();
    for path in traces {
        let (raw, trace) = load_trace(path)?;
        let report = lint_trace(&raw, &trace, truth.get(&trace.header.instance.id));
        if !report.clean() {
            dirty += 1;
        }
        out.push(json!({"trace": path.display().to_string(), "report": report}));
    }
    emit(&json!({"traces": out.len(), "flagged": dirty, "results": out}));
    if dirty > 0 {
        return Err(Failure::partial(format!("{dirty} of {} traces have findings", traces.len())));
    }
    Ok(())
}
