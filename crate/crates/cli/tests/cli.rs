use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use eel_core::corpus::write_samples;
use eel_core::model::EvaluatorCapability;
use eel_core::runner::{render_predictions, PredictionRecord};
use eel_core::{Answer, TaskInstance, TaskType};
use serde_json::Value;

fn eel(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_eel")).args(args).env_remove("EEL_API_BASE").output().expect("binary runs")
}

fn ok(args: &[&str]) -> Value {
    let out = eel(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("json on stdout")
}

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/test-data")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn tree(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn scripted_explore_is_reproducible() {
    let corpus = fixtures().join("corpus/explore10.jsonl");
    let script = fixtures().join("scripts/explore10.json");
    let t = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let root = t.path().join(name);
        let v = ok(&[
            "explore", "--corpus", s(&corpus), "--store", s(&root.join("store")), "--mock-script", s(&script),
            "--trace-dir", s(&root.join("traces")), "--out", s(&root),
        ]);
        assert_eq!(v["episodes"], 10);
        assert_eq!(v["failed_instances"], 0);
        assert!(root.join("run_summary.json").exists());
        root
    };
    let (a, b) = (run("a"), run("b"));
    assert_eq!(tree(&a.join("store")), tree(&b.join("store")));
    assert_eq!(tree(&a.join("traces")), tree(&b.join("traces")));
    assert_eq!(std::fs::read(a.join("run_summary.json")).unwrap(), std::fs::read(b.join("run_summary.json")).unwrap());

    let traces: Vec<String> = tree(&a.join("traces")).iter().map(|(p, _)| s(&a.join("traces").join(p)).to_string()).collect();
    let mut args = vec!["replay", "--corpus", s(&corpus)];
    args.extend(traces.iter().map(String::as_str));
    assert_eq!(ok(&args)["divergent"], 0);

    let report = ok(&["report", "--store", s(&a.join("store"))]);
    let summary: Value = serde_json::from_slice(&std::fs::read(a.join("run_summary.json")).unwrap()).unwrap();
    assert_eq!(report["totals"]["notes"], summary["notes_committed"]);
}

#[test]
fn explore_without_targets_is_a_config_error() {
    let t = tempfile::tempdir().unwrap();
    let corpus = t.path().join("bare.jsonl");
    ok(&["gen-corpus", "--count", "3", "--no-truth", "--out", s(&corpus)]);
    let out = eel(&["explore", "--corpus", s(&corpus), "--store", s(&t.path().join("store")), "--out", s(t.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("exploration requires targets"));
    let out = eel(&["explore", "--corpus", s(&t.path().join("nope.jsonl")), "--store", s(&t.path().join("store"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn infer_leaves_the_store_untouched() {
    let t = tempfile::tempdir().unwrap();
    let (learn, eval, store) = (t.path().join("learn.jsonl"), t.path().join("eval.jsonl"), t.path().join("store"));
    ok(&["gen-corpus", "--count", "20", "--seed", "1", "--tag", "learn", "--out", s(&learn)]);
    ok(&["gen-corpus", "--count", "4", "--seed", "2", "--tag", "eval", "--out", s(&eval)]);
    let explored = ok(&["explore", "--corpus", s(&learn), "--store", s(&store), "--out", s(t.path()), "--mock-policy", "heuristic"]);
    let before = tree(&store);
    let with = ok(&["infer", "--corpus", s(&eval), "--store", s(&store), "--out", s(&t.path().join("with.jsonl"))]);
    assert_eq!(tree(&store), before);
    assert_eq!(with["store_digest"], explored["store_digest"]);
    assert_eq!(with["store_missing"], false);
    let without = ok(&["infer", "--corpus", s(&eval), "--store", s(&t.path().join("absent")), "--out", s(&t.path().join("without.jsonl"))]);
    assert_eq!(without["store_missing"], true);
    assert!(!t.path().join("absent").exists());
    assert_eq!(std::fs::read_to_string(t.path().join("with.jsonl")).unwrap().lines().count(), 4);
}

fn record(inst: &TaskInstance, prediction: Answer) -> PredictionRecord {
    PredictionRecord {
        id: inst.id.clone(),
        scope: inst.scope.clone(),
        prediction,
        tool_chain: vec![],
        execution_context: String::new(),
        degraded: false,
        rules: vec![],
    }
}

#[test]
fn eval_scores_perfect_and_thresholded_rows() {
    let t = tempfile::tempdir().unwrap();
    let cap = EvaluatorCapability::offline_scorer();
    let corpus = t.path().join("eval.jsonl");
    ok(&["gen-corpus", "--count", "5", "--seed", "3", "--out", s(&corpus)]);
    let insts = eel_core::corpus::load_samples(&corpus, eel_core::corpus::CorpusRole::Learning).unwrap().instances;
    let mut preds: Vec<PredictionRecord> = insts.iter().map(|i| record(i, i.ground_truth(&cap).unwrap().clone())).collect();
    std::fs::write(t.path().join("p.jsonl"), render_predictions(&preds)).unwrap();
    let scores = ok(&["eval", "--predictions", s(&t.path().join("p.jsonl")), "--corpus", s(&corpus), "--out", s(&t.path().join("scores.json"))]);
    assert_eq!(scores["scopes"][0]["metrics"]["mae"], 0.0);
    assert_eq!(scores["scopes"][0]["metrics"]["rmse"], 0.0);

    let h = insts[0].horizon;
    preds[0].prediction = Answer::Numeric(vec![1e6; h]);
    std::fs::write(t.path().join("p.jsonl"), render_predictions(&preds)).unwrap();
    let scope = insts[0].scope.clone();
    std::fs::write(t.path().join("th.json"), format!("{{\"{scope}\": 100.0}}")).unwrap();
    let scores = ok(&[
        "eval", "--predictions", s(&t.path().join("p.jsonl")), "--corpus", s(&corpus),
        "--threshold-file", s(&t.path().join("th.json")), "--out", s(&t.path().join("scores.json")),
    ]);
    assert_eq!(scores["scopes"][0]["raw_n"], 5);
    assert_eq!(scores["scopes"][0]["effective_n"], 4);
    assert!(t.path().join("scores.json").exists());
}

#[test]
fn eval_reports_both_accuracies_for_five_way_scopes() {
    let t = tempfile::tempdir().unwrap();
    let space = ["strongly down", "mildly down", "neutral", "mildly up", "strongly up"];
    let insts: Vec<TaskInstance> = (0..4)
        .map(|i| {
            TaskInstance::new(format!("t{i}"), vec![1.0, 2.0, 3.0, 4.0], TaskType::TrendPast, 1, "stock_trend")
                .with_labels(&space)
                .with_ground_truth(Answer::Label(space[i].into()))
        })
        .collect();
    write_samples(&t.path().join("c.jsonl"), &insts, true).unwrap();
    let guesses = ["strongly down", "strongly down", "neutral", "neutral"];
    let preds: Vec<PredictionRecord> = insts.iter().zip(guesses).map(|(i, g)| record(i, Answer::Label(g.into()))).collect();
    std::fs::write(t.path().join("p.jsonl"), render_predictions(&preds)).unwrap();
    let scores = ok(&["eval", "--predictions", s(&t.path().join("p.jsonl")), "--corpus", s(&t.path().join("c.jsonl")), "--out", s(&t.path().join("s.json"))]);
    let m = &scores["scopes"][0]["metrics"];
    assert_eq!(m["acc_5"], 0.5);
    assert_eq!(m["acc_3"], 0.75);
}

#[test]
fn dropout_simulation_outputs() {
    let t = tempfile::tempdir().unwrap();
    let v = ok(&["simulate-dropout", "--seeds", "4", "--out", s(t.path())]);
    assert!(v["mean_top_k_on"].as_f64().unwrap() < v["mean_top_k_off"].as_f64().unwrap());
    let csv = std::fs::read_to_string(t.path().join("dropout_diag.csv")).unwrap();
    assert_eq!(csv.lines().count(), 11);
    assert!(csv.starts_with("prefix,top_k_on,top_k_off"));

    let mut sc = serde_json::to_value(eel_core::simulate::DropoutScenario::biased()).unwrap();
    for tool in sc["tools"].as_array_mut().unwrap() {
        tool["protected"] = Value::Bool(true);
    }
    std::fs::write(t.path().join("sc.json"), sc.to_string()).unwrap();
    let v = ok(&["simulate-dropout", "--scenario", s(&t.path().join("sc.json")), "--seeds", "3", "--out", s(t.path())]);
    assert_eq!(v["mean_top_k_on"], v["mean_top_k_off"]);
}

#[test]
fn fresh_store_reports_zeros() {
    let t = tempfile::tempdir().unwrap();
    std::fs::create_dir(t.path().join("store")).unwrap();
    let v = ok(&["report", "--store", s(&t.path().join("store"))]);
    assert_eq!(v["totals"], serde_json::json!({"scopes": 0, "notes": 0, "rules": 0, "conflicts": 0}));
    assert_eq!(eel(&["report", "--store", s(&t.path().join("none"))]).status.code(), Some(2));
}

#[test]
fn tampered_trace_fails_replay_and_planted_truth_fails_lint() {
    let t = tempfile::tempdir().unwrap();
    let (learn, eval, store, tr) = (t.path().join("l.jsonl"), t.path().join("e.jsonl"), t.path().join("store"), t.path().join("tr"));
    ok(&["gen-corpus", "--count", "2", "--seed", "1", "--tag", "l", "--out", s(&learn)]);
    ok(&["gen-corpus", "--count", "1", "--seed", "2", "--tag", "e", "--out", s(&eval)]);
    ok(&["explore", "--corpus", s(&learn), "--store", s(&store), "--trace-dir", s(&tr), "--out", s(t.path())]);
    ok(&["infer", "--corpus", s(&eval), "--store", s(&store), "--trace-dir", s(&tr), "--out", s(&t.path().join("p.jsonl"))]);
    let files = tree(&tr);
    let ep = tr.join(&files.iter().find(|(p, _)| p.to_str().unwrap().starts_with("ep")).unwrap().0);
    let raw = std::fs::read_to_string(&ep).unwrap();
    let tampered: Vec<String> = raw
        .lines()
        .map(|l| if l.contains("\"kind\":\"tool_result\"") && l.contains("\"artifact\"") { l.replacen("\"args_digest\":\"", "\"args_digest\":\"ff", 1) } else { l.to_string() })
        .collect();
    std::fs::write(&ep, tampered.join("\n") + "\n").unwrap();
    let out = eel(&["replay", s(&ep), "--corpus", s(&learn)]);
    assert_eq!(out.status.code(), Some(3));

    let inf = tr.join(&files.iter().find(|(p, _)| p.to_str().unwrap().starts_with("inf")).unwrap().0);
    assert!(eel(&["lint", s(&inf), "--corpus", s(&eval)]).status.success());
    let cap = EvaluatorCapability::offline_scorer();
    let truth = eel_core::corpus::load_samples(&eval, eel_core::corpus::CorpusRole::Learning).unwrap().instances[0].ground_truth(&cap).unwrap().clone();
    let mut raw = std::fs::read_to_string(&inf).unwrap();
    raw.push_str(&serde_json::json!({"ts": 999, "episode": "x", "branch": "main", "kind": "outcome", "payload": {"seen": truth}}).to_string());
    raw.push('\n');
    std::fs::write(&inf, raw).unwrap();
    let out = eel(&["lint", s(&inf), "--corpus", s(&eval)]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stdout));
}
