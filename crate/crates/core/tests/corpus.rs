mod common;

use eel_core::corpus::{
    disjointness_check, load_samples, parse_samples, rebalance_labels, render_samples, write_samples, CorpusError, CorpusRole,
};
use eel_core::model::EvaluatorCapability;
use eel_core::toolkit::forecast::{naive, seasonal_naive};
use eel_core::{Answer, TaskInstance, TaskType};

#[test]
fn malformed_lines_become_rejects() {
    let good = render_samples(&common::seasonal("c", 2, 1), true);
    let raw = format!("{}not json\n\n{{\"id\":\"x\"}}\n{}", good.lines().next().unwrap().to_owned() + "\n", good.lines().nth(1).unwrap());
    let loaded = parse_samples(&raw, CorpusRole::Learning);
    assert_eq!(loaded.instances.len(), 2);
    let lines: Vec<usize> = loaded.rejects.iter().map(|r| r.line).collect();
    assert_eq!(lines, vec![2, 4]);
    assert_eq!(loaded.manifest.total(), 2);
}

#[test]
fn learning_corpus_needs_targets() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("eval.jsonl");
    write_samples(&path, &common::seasonal("c", 3, 1), false).unwrap();
    match load_samples(&path, CorpusRole::Learning) {
        Err(CorpusError::MissingTargets { lines, .. }) => assert_eq!(lines, vec![1, 2, 3]),
        other => panic!("expected missing targets, got {other:?}"),
    }
    let eval = load_samples(&path, CorpusRole::Evaluation).unwrap();
    assert!(eval.instances.iter().all(|i| !i.has_ground_truth()));
}

#[test]
fn written_truth_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("learn.jsonl");
    let src = common::seasonal("c", 4, 9);
    write_samples(&path, &src, true).unwrap();
    assert_eq!(load_samples(&path, CorpusRole::Learning).unwrap().instances, src);
}

#[test]
fn disjointness_flags_shared_sources() {
    let a = parse_samples(&render_samples(&common::seasonal("a", 5, 1), true), CorpusRole::Learning);
    let b = parse_samples(&render_samples(&common::seasonal("b", 5, 1), true), CorpusRole::Evaluation);
    assert!(disjointness_check(&a.manifest, &b.manifest).pass);
    let c = parse_samples(&render_samples(&common::seasonal("a", 5, 1)[..2], true), CorpusRole::Evaluation);
    let r = disjointness_check(&a.manifest, &c.manifest);
    assert!(!r.pass);
    assert_eq!(r.overlap.values().map(Vec::len).sum::<usize>(), 2);
}

#[test]
fn rebalance_caps_majority_label() {
    let mut samples = Vec::new();
    for (label, n) in [("up", 100), ("down", 10)] {
        for i in 0..n {
            samples.push(
                TaskInstance::new(format!("{label}{i}"), vec![1.0, 2.0, 3.0], TaskType::TrendPast, 1, "w_trend")
                    .with_labels(&["up", "down", "flat"])
                    .with_ground_truth(Answer::Label(label.into())),
            );
        }
    }
    let (kept, warnings) = rebalance_labels(&samples, "w_trend", 2.0, 3);
    let cap = EvaluatorCapability::offline_scorer();
    let count = |l: &str| kept.iter().filter(|s| s.ground_truth(&cap).unwrap().as_label() == Some(l)).count();
    assert_eq!(count("down"), 10);
    assert!(count("up") <= 20, "{}", count("up"));
    assert!(warnings.iter().any(|w| w.contains("flat")));
    let (again, _) = rebalance_labels(&samples, "w_trend", 2.0, 3);
    assert_eq!(kept, again);
}

#[test]
fn seasonal_family_favours_seasonal_naive() {
    let cap = EvaluatorCapability::offline_scorer();
    let samples = common::seasonal("c", 100, 4);
    let mut wins = 0;
    for s in &samples {
        let truth = s.ground_truth(&cap).unwrap().as_numeric().unwrap();
        let err = |p: Vec<f64>| eel_core::metrics::mae(&p, truth).unwrap();
        if err(seasonal_naive(&s.series, 24, s.horizon).unwrap()) < err(naive(&s.series, s.horizon).unwrap()) {
            wins += 1;
        }
    }
    assert!(wins >= 90, "{wins}/100");
}
