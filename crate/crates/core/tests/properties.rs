use std::collections::BTreeSet;

use proptest::prelude::*;

use eel_core::metrics::align_length;
use eel_core::orchestrator::{Trace, TraceHeader, TraceKind, ENGINE_VERSION, TRACE_FORMAT};
use eel_core::prompt::Applicability;
use eel_core::registry::{entropy_of, keep_probability, top_k_share_of, Mode};
use eel_core::store::{clean_text, MemoryState, RuleDraft, RuleKind, MEMORY_CAP};

const TOOLS: [&str; 5] = ["naive", "seasonal_naive", "drift", "holt", "ses"];

fn draft() -> impl Strategy<Value = RuleDraft> {
    (0..3usize, any::<bool>(), prop::collection::btree_set(0..5usize, 0..3), prop::collection::btree_set(0..5usize, 0..3), 1..1000u64)
        .prop_map(|(k, seasonal, pre, avo, seq)| {
            let name = |s: BTreeSet<usize>| s.into_iter().map(|i| TOOLS[i].to_string()).collect::<BTreeSet<_>>();
            let kind = [RuleKind::ToolPreference, RuleKind::ConditionAction, RuleKind::Avoidance][k];
            let (mut pre, avo) = (name(pre), name(avo));
            if kind == RuleKind::Avoidance {
                pre.clear();
            }
            RuleDraft {
                kind,
                applicability: Applicability { task_subtype: Some("forecast".into()), seasonal: Some(seasonal), ..Default::default() },
                preferred: pre.difference(&avo).cloned().collect(),
                avoided: avo,
                rationale: String::new(),
                note_seq: seq,
            }
        })
        .prop_filter("stance needed", |d| !d.preferred.is_empty() || !d.avoided.is_empty())
}

proptest! {
    #[test]
    fn keep_probability_is_a_probability(n_i in 0u64..1_000_000, n_min in 0u64..1_000, alpha in 0.001f64..8.0) {
        let p = keep_probability(n_i, n_min, alpha, false).unwrap();
        prop_assert!(p > 0.0 && p <= 1.0);
        if n_i <= n_min {
            prop_assert_eq!(p, 1.0);
        }
        prop_assert_eq!(keep_probability(n_i, n_min, alpha, true).unwrap(), 1.0);
    }

    #[test]
    fn entropy_is_bounded(counts in prop::collection::vec(1u64..500, 1..40)) {
        let h = entropy_of(counts.iter().copied()).unwrap();
        prop_assert!(h >= 0.0 && h <= (counts.len() as f64).ln() + 1e-12);
    }

    #[test]
    fn top_k_share_grows_with_k(counts in prop::collection::vec(0u64..50, 1..20), k in 1usize..20) {
        prop_assume!(counts.iter().any(|c| *c > 0));
        let a = top_k_share_of(counts.iter().copied(), k).unwrap();
        let b = top_k_share_of(counts.iter().copied(), k + 1).unwrap();
        prop_assert!((0.0..=1.0).contains(&a) && a <= b);
    }

    #[test]
    fn align_length_keeps_endpoints(pred in prop::collection::vec(-1e3f64..1e3, 2..50), m in 2usize..100) {
        let a = align_length(&pred, m).unwrap();
        prop_assert_eq!(a.len(), m);
        prop_assert_eq!(a[0], pred[0]);
        prop_assert_eq!(a[m - 1], pred[pred.len() - 1]);
        let (lo, hi) = pred.iter().fold((f64::MAX, f64::MIN), |(l, h), x| (l.min(*x), h.max(*x)));
        prop_assert!(a.iter().all(|x| *x >= lo - 1e-9 && *x <= hi + 1e-9));
    }

    #[test]
    fn clean_text_is_idempotent(s in "[a-z _:=\\[\\],.0-9]{0,80}") {
        let once = clean_text(&s);
        prop_assert_eq!(clean_text(&once), once);
    }

    #[test]
    fn memory_update_is_capped_and_safe(drafts in prop::collection::vec(draft(), 1..120)) {
        let mut m = MemoryState::default();
        for d in &drafts {
            m.update(std::slice::from_ref(d));
            prop_assert!(m.rules.len() <= MEMORY_CAP);
            prop_assert!(m.injectable_contradictions().is_empty());
            for id in &m.demoted {
                prop_assert!(m.get(*id).is_none_or(|r| !r.injectable));
            }
        }
    }

    #[test]
    fn trace_jsonl_round_trips(events in prop::collection::vec((0..3usize, "[a-z]{1,8}", -1e6f64..1e6), 0..30)) {
        let header = TraceHeader {
            format: TRACE_FORMAT.into(),
            engine_version: ENGINE_VERSION.into(),
            config_digest: "c".into(),
            mode: Mode::Exploration,
            episode: "ep".into(),
            instance: eel_core::TaskInstance::new("i", vec![1.0, 2.0], eel_core::TaskType::Forecast, 1, "s").to_record(None),
            prior_exists: false,
            require_prior_and_alternative: true,
            min_valid_candidates: 2,
        };
        let mut t = Trace::new(header);
        for (b, tool, x) in &events {
            t.push(&format!("b{b}"), TraceKind::ToolCall, serde_json::json!({"tool": tool, "x": x}));
        }
        let raw = t.to_jsonl();
        let back = Trace::parse(&raw).unwrap();
        prop_assert_eq!(back.to_jsonl(), raw);
        prop_assert_eq!(back.events.len(), events.len());
        prop_assert!(back.events.iter().enumerate().all(|(i, e)| e.ts == i as u64 + 1));
    }
}
