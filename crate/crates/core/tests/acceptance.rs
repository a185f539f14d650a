//! Acceptance gate. Prints one PASS/FAIL line per criterion and exits
//! nonzero when any fails.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use eel_core::gateway::{ChatBackend, HeuristicAgent};
use eel_core::metrics::{align_length, mae, mape, mse, rmse, summarize, MetricReport, ScoredRow, SummaryPolicy};
use eel_core::model::{BranchRole, EvaluatorCapability};
use eel_core::orchestrator::{Trace, TraceKind};
use eel_core::prompt::{build_inference_prompt, fingerprint, Applicability};
use eel_core::registry::{entropy_of, keep_probability, top_k_share_of, Mode, ToolCategory};
use eel_core::replay::{leak_needles, replay, scan_for_leaks};
use eel_core::simulate::{simulate_dropout, DropoutScenario};
use eel_core::store::{
    update_memory, CleanEvidence, LearningNote, MemoryState, NoteCandidate, RuleKind, Stage, MEMORY_CAP,
};
use eel_core::{Answer, Engine, EvidenceClass, ExperienceStore, RunConfig, SupervisionMetric, TaskInstance, Toolkit};

type Check = fn() -> Result<(), String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn rel(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

fn keep_exact() -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..10_000 {
        let n_min: u64 = rng.gen_range(0..1_000);
        let n_i: u64 = n_min + rng.gen_range(0..100_000);
        let alpha: f64 = rng.gen_range(0.01..4.0);
        let got = keep_probability(n_i, n_min, alpha, false).map_err(|e| e.to_string())?;
        let want = (alpha * ((1.0 + n_min as f64).ln() - (1.0 + n_i as f64).ln())).exp();
        ensure!(rel(got, want) <= 1e-12, "keep({n_i}, {n_min}, {alpha}) = {got}, oracle {want}");
        let shielded = keep_probability(n_i, n_min, alpha, true).map_err(|e| e.to_string())?;
        ensure!(shielded == 1.0, "protected tool got {shielded}");
    }
    for (n_i, n_min) in [(0, 0), (5, 5), (0, 3), (7, 9)] {
        let p = keep_probability(n_i, n_min, 1.0, false).map_err(|e| e.to_string())?;
        ensure!(p == 1.0, "cold edge ({n_i}, {n_min}) gave {p}");
    }
    Ok(())
}

fn keep_monotone() -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..10_000 {
        let n_min: u64 = rng.gen_range(0..500);
        let n_j: u64 = n_min + rng.gen_range(0..10_000);
        let n_i: u64 = n_j + rng.gen_range(1..10_000);
        let alpha: f64 = rng.gen_range(0.05..4.0);
        let ki = keep_probability(n_i, n_min, alpha, false).map_err(|e| e.to_string())?;
        let kj = keep_probability(n_j, n_min, alpha, false).map_err(|e| e.to_string())?;
        ensure!(ki < kj, "n_i={n_i} n_j={n_j} n_min={n_min} alpha={alpha}: {ki} !< {kj}");
    }
    Ok(())
}

fn entropy_diagnostics() -> Result<(), String> {
    for k in 2..=50u64 {
        let h = entropy_of(std::iter::repeat_n(7, k as usize)).ok_or("empty counts")?;
        ensure!((h - (k as f64).ln()).abs() <= 1e-9, "uniform k={k}: {h}");
    }
    let h = entropy_of([3, 1]).ok_or("empty counts")?;
    ensure!((h - 0.5623).abs() <= 1e-4, "[3,1] entropy {h}");
    let s = top_k_share_of([10, 5, 3, 2, 1, 1, 1], 5).ok_or("empty counts")?;
    ensure!((s - 21.0 / 23.0).abs() <= 1e-12, "top-5 share {s}");
    Ok(())
}

fn metric_oracle() -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..1_000 {
        let n = rng.gen_range(1..64);
        let p: Vec<f64> = (0..n).map(|_| rng.gen_range(-100.0..100.0)).collect();
        let t: Vec<f64> = (0..n).map(|_| rng.gen_range(0.5..100.0) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 }).collect();
        let (mut abs, mut sq, mut pct) = (0.0, 0.0, 0.0);
        for i in 0..n {
            let d = p[i] - t[i];
            abs += d.abs();
            sq += d * d;
            pct += (d / t[i]).abs();
        }
        let nf = n as f64;
        let pairs = [
            ("mae", mae(&p, &t), abs / nf),
            ("mse", mse(&p, &t), sq / nf),
            ("rmse", rmse(&p, &t), (sq / nf).sqrt()),
            ("mape", mape(&p, &t), 100.0 * pct / nf),
        ];
        for (name, got, want) in pairs {
            let got = got.map_err(|e| e.to_string())?;
            ensure!(rel(got, want) <= 1e-12, "{name}: {got} vs {want}");
        }
        let same = align_length(&p, n).map_err(|e| e.to_string())?;
        ensure!(same == p, "align_length is not an identity at equal length");
        let m = rng.gen_range(2..80);
        if n >= 2 {
            let a = align_length(&p, m).map_err(|e| e.to_string())?;
            ensure!(a.len() == m && a[0] == p[0] && a[m - 1] == p[n - 1], "endpoints not preserved for {n}->{m}");
        }
    }
    let a = align_length(&[0.0, 2.0], 3).map_err(|e| e.to_string())?;
    ensure!(a == vec![0.0, 1.0, 2.0], "[0,2] -> {a:?}");
    Ok(())
}

fn summary_filter() -> Result<(), String> {
    let rows: Vec<ScoredRow> = [1.0, 2.0, 1e6]
        .iter()
        .enumerate()
        .map(|(i, v)| ScoredRow::Scored {
            id: format!("r{i}"),
            report: MetricReport { mae: Some(*v), n_points: 1, ..Default::default() },
        })
        .collect();
    let s = summarize("s", &rows, &SummaryPolicy::new(SupervisionMetric::Mae).with_threshold(100.0));
    let mean = s.metrics.get("mae").copied().unwrap_or(f64::NAN);
    ensure!(mean == 1.5 && s.effective_n == 2 && s.raw_n == 3, "mean {mean} eff {} raw {}", s.effective_n, s.raw_n);
    Ok(())
}

fn exploration_contract() -> Result<(), String> {
    for (name, want) in common::CONTRACT_FIXTURES {
        let got = common::run_fixture(name).verdict.label();
        ensure!(got == want, "{name}: verdict {got}, expected {want}");
    }
    for (name, want) in common::EVIDENCE_FIXTURES {
        let got = common::run_fixture(name).outcome.evidence_class;
        ensure!(got == want, "{name}: evidence {got:?}, expected {want:?}");
    }
    Ok(())
}

const POOL: [&str; 8] = ["naive", "seasonal_naive", "drift", "moving_average", "holt", "ses", "linear_trend", "detect_trend"];

fn random_note(rng: &mut ChaCha8Rng, scope: &str, i: usize) -> LearningNote {
    let chi = Applicability {
        task_subtype: Some("forecast".into()),
        seasonal: Some(rng.gen_bool(0.5)),
        length_band: Some(["short", "mid"][rng.gen_range(0..2)].into()),
        ..Default::default()
    };
    let class = match rng.gen_range(0..10) {
        0..=5 => EvidenceClass::Comparative,
        6..=8 => EvidenceClass::SingleExecution,
        _ => EvidenceClass::Failure,
    };
    let pick = |rng: &mut ChaCha8Rng| POOL[rng.gen_range(0..POOL.len())].to_string();
    let win = vec![pick(rng)];
    let lose = vec![pick(rng)];
    let mut errors = Vec::new();
    if rng.gen_bool(0.2) {
        errors.push(pick(rng));
    }
    let cand = |id: &str, slot, chain: Vec<String>, valid, q: Option<f64>, errs: Vec<String>| NoteCandidate {
        branch_id: id.into(),
        slot,
        role: BranchRole::Free,
        tool_chain: chain,
        valid,
        quality: q,
        metric_value: q.map(|x| -x),
        error_tools: errs,
    };
    let (winner, winner_chain, candidates) = match class {
        EvidenceClass::Comparative => (
            Some("b0".to_string()),
            win.clone(),
            vec![cand("b0", 0, win, true, Some(-1.0), vec![]), cand("b1", 1, lose, true, Some(-2.0), errors)],
        ),
        EvidenceClass::SingleExecution => (
            Some("b0".to_string()),
            win.clone(),
            vec![cand("b0", 0, win, true, Some(-1.0), vec![]), cand("b1", 1, lose, false, None, errors)],
        ),
        EvidenceClass::Failure => (None, vec![], vec![cand("b0", 0, lose, false, None, errors)]),
    };
    LearningNote {
        seq: 0,
        scope: scope.into(),
        instance_id: format!("s{i}"),
        prompt_digest: format!("{i:08x}"),
        evidence_class: class,
        applicability: chi,
        metric: "mae".into(),
        winner,
        winner_chain,
        candidates,
        insight: "comparison recorded".into(),
        recommendation: String::new(),
        summary_source: "template".into(),
        evaluated: rng.gen_bool(0.9),
        trace_ref: None,
    }
}

fn store_laws() -> Result<(), String> {
    let scope = "energy_forecast_mid";
    let e = |x: eel_core::store::StoreError| x.to_string();
    for stream in 0..200u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1_000 + stream);
        let store = ExperienceStore::in_memory();
        let mut committed: Vec<LearningNote> = Vec::new();
        let mut distills = 0;
        for i in 0..100 {
            let note = random_note(&mut rng, scope, i);
            let evaluated = note.evaluated;
            let before = store.memory_fingerprint(scope).map_err(e)?;
            let report = store.commit_note(note.clone()).map_err(e)?;
            match report.seq {
                Some(seq) => {
                    ensure!(evaluated, "stream {stream}: unevaluated note got seq {seq}");
                    ensure!(seq == committed.len() as u64 + 1, "stream {stream}: seq {seq} after {}", committed.len());
                    committed.push(LearningNote { seq, ..note });
                }
                None => ensure!(!evaluated && report.stages.is_empty(), "stream {stream}: evaluated note dropped"),
            }
            let n = committed.len() as u64;
            let fired = report.stages.contains(&Stage::NotesToMemory);
            let due = report.seq.is_some() && n.is_multiple_of(10);
            ensure!(fired == due, "stream {stream}: distillation fired={fired} at note {n}");
            if fired {
                distills += 1;
                let after = store.memory_fingerprint(scope).map_err(e)?;
                let rebuilt = report.stages.contains(&Stage::MemoryToToolNotes);
                ensure!(rebuilt == (before != after), "stream {stream}: rebuild={rebuilt} with fingerprint change={}", before != after);
            }
            let rules = store.memory(scope).map_err(e)?.rules.len();
            ensure!(rules <= MEMORY_CAP, "stream {stream}: {rules} rules");
        }
        let n = committed.len() as u64;
        let before = store.memory_fingerprint(scope).map_err(e)?;
        let flushed = store.finalize(scope).map_err(e)?;
        ensure!(flushed.contains(&Stage::NotesToMemory) == !n.is_multiple_of(10), "stream {stream}: finalize at {n} gave {flushed:?}");
        if !flushed.is_empty() {
            let after = store.memory_fingerprint(scope).map_err(e)?;
            ensure!(flushed.contains(&Stage::MemoryToToolNotes) == (before != after), "stream {stream}: flush rebuild mismatch");
        }
        ensure!(store.finalize(scope).map_err(e)?.is_empty(), "stream {stream}: second finalize did work");
        ensure!(distills == n / 10, "stream {stream}: {distills} distillations for {n} notes");
        let stored = store.notes(scope).map_err(e)?;
        ensure!(stored == committed, "stream {stream}: stored notes differ from the append sequence");
        ensure!(store.memory(scope).map_err(e)?.rules.len() <= MEMORY_CAP, "stream {stream}: cap exceeded after flush");
    }
    Ok(())
}

fn contradictory_injectable(m: &MemoryState) -> Option<(u64, u64)> {
    let live: Vec<_> = m.rules.iter().filter(|r| r.injectable).collect();
    for (i, a) in live.iter().enumerate() {
        for b in &live[i + 1..] {
            let clash = a.applicability == b.applicability
                && (!a.preferred_tools.is_disjoint(&b.avoided_tools) || !a.avoided_tools.is_disjoint(&b.preferred_tools));
            if clash {
                return Some((a.id, b.id));
            }
        }
    }
    None
}

fn conflict_safety() -> Result<(), String> {
    let chi = Applicability { task_subtype: Some("forecast".into()), seasonal: Some(true), ..Default::default() };
    let ev = |seq, win: &str, lose: &str| CleanEvidence {
        scope: "s".into(),
        seq,
        evidence_class: EvidenceClass::Comparative,
        applicability: chi.clone(),
        winner_chain: vec![win.into()],
        loser_chains: vec![vec![lose.into()]],
        error_tools: BTreeSet::new(),
        insight: String::new(),
        recommendation: String::new(),
    };
    let stream = [ev(1, "seasonal_naive", "naive"), ev(2, "naive", "seasonal_naive"), ev(3, "seasonal_naive", "naive"), ev(4, "seasonal_naive", "naive")];
    let mut m = MemoryState::default();
    for (i, e) in stream.iter().enumerate() {
        m = update_memory(&m, e).0;
        if let Some(pair) = contradictory_injectable(&m) {
            return Err(format!("after evidence {}: rules {pair:?} both injectable", i + 1));
        }
        ensure!(m.injectable_contradictions().is_empty(), "engine reports injectable contradictions after {}", i + 1);
        if i == 1 {
            ensure!(m.rules.len() == 2 && m.rules.iter().all(|r| !r.injectable), "fixture state: {:?}", m.rules);
            ensure!(m.open_conflicts().count() == 1, "no open conflict registered");
        }
    }
    let keep = m.rules.iter().find(|r| r.preferred_tools.contains("seasonal_naive")).ok_or("supported rule missing")?;
    let lose = m.rules.iter().find(|r| r.preferred_tools.contains("naive")).ok_or("opposing rule missing")?;
    ensure!(keep.injectable, "supported side not re-enabled");
    ensure!(!lose.injectable && m.demoted.contains(&lose.id), "opposing side not demoted");
    ensure!(m.open_conflicts().count() == 0, "conflict still open");
    Ok(())
}

fn trace_files(dir: &Path) -> Vec<(String, String)> {
    common::tree(dir).into_iter().map(|(p, b)| (p, String::from_utf8(b).expect("utf-8 trace"))).collect()
}

fn leakage_gate() -> Result<(), String> {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let kit = Toolkit::builtin();
    let agent = HeuristicAgent::new();
    let store = ExperienceStore::open(&tmp.path().join("store")).map_err(|e| e.to_string())?;
    let engine = Engine::new(&kit, &agent, &store, RunConfig::default()).map_err(|e| e.to_string())?.with_trace_dir(tmp.path().join("traces"));
    let learn = common::seasonal("leak-learn", 20, 31);
    let eval = common::seasonal("leak-eval", 10, 32);
    engine.explore(&learn).map_err(|e| e.to_string())?;
    engine.infer(&eval).map_err(|e| e.to_string())?;

    let cap = EvaluatorCapability::offline_scorer();
    let needles = |insts: &[TaskInstance]| -> Vec<String> {
        let mut n: Vec<String> = insts.iter().flat_map(|i| leak_needles(i.ground_truth(&cap).expect("truth"))).collect();
        n.sort();
        n.dedup();
        n
    };
    let eval_needles = needles(&eval);
    let all_needles = needles(&[learn.clone(), eval.clone()].concat());

    let registry = kit.registry();
    let mut prompts = 0;
    for inst in &eval {
        let view = inst.without_ground_truth();
        let sel = store.retrieve(&view.scope, &fingerprint(&view)).map_err(|e| e.to_string())?;
        let tools = registry.visible(&view.scope, Mode::Inference);
        let bad: Vec<&str> = tools.iter().filter(|t| !t.category.is_task_facing()).map(|t| t.tool_id.as_str()).collect();
        ensure!(bad.is_empty(), "inference exposes {bad:?}");
        let bundle = build_inference_prompt(&view, &sel, &tools).map_err(|e| e.to_string())?;
        let text = serde_json::to_string_pretty(&bundle.messages()).map_err(|e| e.to_string())?;
        let raw: String = bundle.messages().iter().map(|m| format!("{}\n", m.content)).collect();
        for body in [&text, &raw] {
            let hits = scan_for_leaks(body, &eval_needles);
            ensure!(hits.is_empty(), "inference prompt for {} leaks {:?}", inst.id, hits);
        }
        prompts += 1;
    }

    let hidden: BTreeSet<String> = registry
        .tools()
        .iter()
        .filter(|t| matches!(t.category, ToolCategory::ExplorationOnly | ToolCategory::Orchestration))
        .map(|t| t.tool_id.clone())
        .collect();
    ensure!(!hidden.is_empty(), "registry has no exploration-only tools to check against");
    let files = trace_files(&tmp.path().join("traces"));
    ensure!(files.len() == learn.len() + eval.len(), "expected {} traces, found {}", learn.len() + eval.len(), files.len());
    for (name, raw) in &files {
        let hits = scan_for_leaks(raw, &all_needles);
        ensure!(hits.is_empty(), "trace {name} leaks {hits:?}");
        let trace = Trace::parse(raw).map_err(|e| e.to_string())?;
        if trace.header.mode != Mode::Inference {
            continue;
        }
        for ev in &trace.events {
            let mut named: Vec<String> = Vec::new();
            if ev.kind == TraceKind::GatewayRequest {
                if let Some(ts) = ev.payload.get("tools").and_then(|v| v.as_array()) {
                    named.extend(ts.iter().filter_map(|t| t.as_str().map(String::from)));
                }
            }
            if ev.kind == TraceKind::ToolCall {
                named.extend(ev.payload.get("tool").and_then(|v| v.as_str()).map(String::from));
            }
            if let Some(t) = named.iter().find(|t| hidden.contains(*t)) {
                return Err(format!("inference trace {name} exposes {t}"));
            }
        }
    }
    ensure!(prompts == eval.len(), "scanned {prompts} prompts");
    Ok(())
}

fn dropout_analog() -> Result<(), String> {
    let sc = DropoutScenario::biased();
    let seeds: Vec<u64> = (0..20).collect();
    let d = simulate_dropout(&sc, &seeds).map_err(|e| e.to_string())?;
    for (on, off) in d.on.iter().zip(&d.off) {
        ensure!(on.top_k_share <= off.top_k_share, "prefix {}: top-5 on {:.4} > off {:.4}", on.prefix, on.top_k_share, off.top_k_share);
        if on.prefix == 50 {
            ensure!(on.coverage >= off.coverage, "prefix 50: coverage on {:.4} < off {:.4}", on.coverage, off.coverage);
        }
    }
    ensure!(d.on.iter().any(|p| p.prefix == 50), "prefix 50 not measured");
    let drop = d.mean_top_k_off - d.mean_top_k_on;
    ensure!(drop >= 0.05, "mean top-5 reduction {drop:.4} (on {:.4}, off {:.4})", d.mean_top_k_on, d.mean_top_k_off);
    println!("    mean top-5 share on {:.3} off {:.3}", d.mean_top_k_on, d.mean_top_k_off);
    Ok(())
}

fn end_to_end_ordering() -> Result<(), String> {
    let kit = Toolkit::builtin();
    let agent = HeuristicAgent::new();
    let store = ExperienceStore::in_memory();
    let empty = ExperienceStore::in_memory();
    let learn = common::seasonal("learn", 300, 11);
    let eval = common::seasonal("eval", 100, 12);
    let engine = Engine::new(&kit, &agent, &store, RunConfig::default()).map_err(|e| e.to_string())?;
    let summary = engine.explore(&learn).map_err(|e| e.to_string())?;
    ensure!(summary.failed_instances == 0, "{} episodes failed", summary.failed_instances);
    let with = engine.infer(&eval).map_err(|e| e.to_string())?;
    let without = Engine::new(&kit, &agent, &empty, RunConfig::default()).map_err(|e| e.to_string())?.infer(&eval).map_err(|e| e.to_string())?;
    let cap = EvaluatorCapability::offline_scorer();
    let mut better = 0;
    for ((a, b), inst) in with.iter().zip(&without).zip(&eval) {
        let truth = inst.ground_truth(&cap).map_err(|e| e.to_string())?;
        let (Answer::Numeric(t), Answer::Numeric(pa), Answer::Numeric(pb)) = (truth, &a.prediction, &b.prediction) else {
            return Err(format!("{}: non-numeric forecast", inst.id));
        };
        let ma = mae(pa, t).map_err(|e| e.to_string())?;
        let mb = mae(pb, t).map_err(|e| e.to_string())?;
        if ma <= mb {
            better += 1;
        }
    }
    let share = better as f64 / eval.len() as f64;
    ensure!(share >= 0.8, "explored store no worse on {better}/{} samples", eval.len());
    let scopes: BTreeSet<&str> = learn.iter().map(|i| i.scope.as_str()).collect();
    for scope in scopes {
        let m = store.memory(scope).map_err(|e| e.to_string())?;
        let ok = m
            .rules
            .iter()
            .any(|r| r.injectable && r.kind == RuleKind::ToolPreference && r.preferred_tools.contains("seasonal_naive"));
        ensure!(ok, "scope {scope} has no injectable seasonal_naive preference: {:?}", m.rules.iter().map(|r| &r.summary).collect::<Vec<_>>());
    }
    println!("    paired no-worse share {share:.2} ({better}/{})", eval.len());
    Ok(())
}

fn explore_with_script(root: &Path, corpus: &[TaskInstance], gateway: &dyn ChatBackend) -> Result<(), String> {
    let kit = Toolkit::builtin();
    let store = ExperienceStore::open(&root.join("store")).map_err(|e| e.to_string())?;
    let engine = Engine::new(&kit, gateway, &store, RunConfig::default()).map_err(|e| e.to_string())?.with_trace_dir(root.join("traces"));
    let s = engine.explore(corpus).map_err(|e| e.to_string())?;
    ensure!(s.failed_instances == 0, "{} episodes failed: {:?}", s.failed_instances, s.episodes_detail.iter().filter_map(|e| e.error.as_ref()).collect::<Vec<_>>());
    Ok(())
}

fn determinism() -> Result<(), String> {
    let corpus = common::load_learning(&common::explore10_path());
    let mock = common::scripted("explore10", |gw| {
        let tmp = tempfile::tempdir().expect("tempdir");
        explore_with_script(tmp.path(), &corpus, gw).expect("recording run");
    });
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    explore_with_script(a.path(), &corpus, &mock)?;
    explore_with_script(b.path(), &corpus, &mock)?;
    for part in ["store", "traces"] {
        let ta = common::tree(&a.path().join(part));
        let tb = common::tree(&b.path().join(part));
        ensure!(!ta.is_empty(), "{part} is empty");
        let names = |t: &[(String, Vec<u8>)]| t.iter().map(|(n, _)| n.clone()).collect::<Vec<_>>();
        ensure!(names(&ta) == names(&tb), "{part} file sets differ");
        if let Some(((n, _), _)) = ta.iter().zip(&tb).find(|(x, y)| x.1 != y.1) {
            return Err(format!("{part}/{n} differs between runs"));
        }
    }
    let digest = |p: &Path| ExperienceStore::open(&p.join("store")).and_then(|s| s.tree_digest()).map_err(|e| e.to_string());
    ensure!(digest(a.path())? == digest(b.path())?, "store tree digests differ");
    let kit = Toolkit::builtin();
    let by_id: BTreeMap<&str, &TaskInstance> = corpus.iter().map(|i| (i.id.as_str(), i)).collect();
    let files = trace_files(&a.path().join("traces"));
    ensure!(files.len() == corpus.len(), "{} traces for {} samples", files.len(), corpus.len());
    for (name, raw) in files {
        let trace = Trace::parse(&raw).map_err(|e| e.to_string())?;
        let truth = by_id.get(trace.header.instance.id.as_str()).copied();
        let r = replay(&trace, &kit, truth).map_err(|e| e.to_string())?;
        ensure!(r.clean() && r.replayed > 0, "{name}: {} replayed, divergences {:?}", r.replayed, r.divergences);
    }
    Ok(())
}

fn main() {
    let criteria: [(&str, Check, Duration); 12] = [
        ("keep-probability exactness", keep_exact, Duration::from_secs(1)),
        ("keep-probability monotonicity", keep_monotone, Duration::from_secs(1)),
        ("entropy and concentration diagnostics", entropy_diagnostics, Duration::from_secs(1)),
        ("metric oracle equivalence", metric_oracle, Duration::from_secs(5)),
        ("summary threshold filtering", summary_filter, Duration::from_secs(1)),
        ("exploration contract fixtures", exploration_contract, Duration::from_secs(10)),
        ("store laws", store_laws, Duration::from_secs(30)),
        ("conflict safety", conflict_safety, Duration::from_secs(5)),
        ("leakage and tool exposure", leakage_gate, Duration::from_secs(10)),
        ("dropout collapse analog", dropout_analog, Duration::from_secs(60)),
        ("end-to-end ordering analog", end_to_end_ordering, Duration::from_secs(300)),
        ("determinism gate", determinism, Duration::from_secs(120)),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, (name, check, budget)) in criteria.iter().enumerate() {
        let n = i + 1;
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str()) || *f == n.to_string()) {
            continue;
        }
        let start = Instant::now();
        let result = match catch_unwind(AssertUnwindSafe(check)) {
            Ok(r) => r,
            Err(p) => Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into())),
        };
        let took = start.elapsed();
        let result = result.and_then(|()| {
            if took > *budget {
                Err(format!("took {took:.1?}, budget {budget:?}"))
            } else {
                Ok(())
            }
        });
        match result {
            Ok(()) => println!("PASS {n:>2} {name} ({took:.2?})"),
            Err(e) => {
                failed += 1;
                println!("FAIL {n:>2} {name} ({took:.2?}): {e}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
