#![allow(dead_code)]

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use eel_core::corpus::{generate_synthetic_corpus, load_samples, write_samples, CorpusRole, Family, FamilySpec, SyntheticSpec};
use eel_core::gateway::{ChatBackend, HeuristicAgent, HeuristicOptions, RecordingBackend, ScriptedMock};
use eel_core::TaskInstance;

pub fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("test-data")
}

/// `EEL_BLESS=1` rewrites recorded scripts, corpora and golden frames.
pub fn blessing() -> bool {
    std::env::var("EEL_BLESS").is_ok_and(|v| v == "1")
}

pub fn options(name: &str) -> HeuristicOptions {
    let mut o = HeuristicOptions::default();
    match name {
        "compliant" | "comparative" | "explore10" => {}
        "identical_branches" => o.identical_branches = true,
        "wrong_final_type" => o.final_type = Some("forecast".into()),
        "single_execution" => o.malformed_slots = BTreeSet::from([1]),
        "failure" => o.malformed_slots = BTreeSet::from([0, 1]),
        other => panic!("no fixture named {other}"),
    }
    o
}

pub fn script_path(name: &str) -> PathBuf {
    data_dir().join("scripts").join(format!("{name}.json"))
}

/// Scripted mock for fixture `name`. When blessing, `drive` first runs
/// against the live heuristic agent under a recorder and the script is
/// rewritten.
pub fn scripted(name: &str, drive: impl FnOnce(&dyn ChatBackend)) -> ScriptedMock {
    let path = script_path(name);
    if blessing() {
        let rec = RecordingBackend::new(HeuristicAgent::with_options(options(name)));
        drive(&rec);
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        rec.save(&path).unwrap();
    }
    ScriptedMock::load(&path).unwrap_or_else(|e| panic!("{e}; run with EEL_BLESS=1 to record {}", path.display()))
}

pub fn seasonal(tag: &str, count: usize, seed: u64) -> Vec<TaskInstance> {
    let spec = SyntheticSpec { families: vec![FamilySpec { family: Family::Seasonal, count, ..FamilySpec::default() }], seed, tag: tag.into() };
    generate_synthetic_corpus(&spec, seed).unwrap()
}

pub fn fixture_instance() -> TaskInstance {
    seasonal("fx", 1, 5).remove(0)
}

/// Mixed ten-sample learning corpus kept on disk with ground truth.
pub fn explore10_path() -> PathBuf {
    let path = data_dir().join("corpus").join("explore10.jsonl");
    if blessing() {
        let spec = SyntheticSpec {
            families: vec![
                FamilySpec { family: Family::Seasonal, count: 4, ..FamilySpec::default() },
                FamilySpec { family: Family::Trending, count: 3, period: 24, cycles: 3, horizon: 6, ..FamilySpec::default() },
                FamilySpec { family: Family::TrendLabel, count: 3, domain: "weather".into(), amplitude: 3.0, cycles: 3, ..FamilySpec::default() },
            ],
            seed: 21,
            tag: "det".into(),
        };
        write_samples(&path, &generate_synthetic_corpus(&spec, 21).unwrap(), true).unwrap();
    }
    path
}

pub fn load_learning(path: &Path) -> Vec<TaskInstance> {
    load_samples(path, CorpusRole::Learning).unwrap().instances
}

/// Sorted relative paths and bytes of every file under `root`.
pub fn tree(root: &Path) -> Vec<(String, Vec<u8>)> {
    fn walk(base: &Path, dir: &Path, out: &mut Vec<(String, Vec<u8>)>) {
        let mut entries: Vec<_> = std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
        entries.sort();
        for p in entries {
            if p.is_dir() {
                walk(base, &p, out);
            } else {
                out.push((p.strip_prefix(base).unwrap().display().to_string(), std::fs::read(&p).unwrap()));
            }
        }
    }
    let mut out = Vec::new();
    if root.exists() {
        walk(root, root, &mut out);
    }
    out
}

pub const CONTRACT_FIXTURES: [(&str, &str); 3] =
    [("compliant", "pass"), ("identical_branches", "no_distinct_pair"), ("wrong_final_type", "wrong_final_type")];

pub const EVIDENCE_FIXTURES: [(&str, eel_core::EvidenceClass); 3] = [
    ("comparative", eel_core::EvidenceClass::Comparative),
    ("single_execution", eel_core::EvidenceClass::SingleExecution),
    ("failure", eel_core::EvidenceClass::Failure),
];

/// One exploration episode over the fixture instance with an empty store,
/// answered by the recorded script for `name`.
pub fn run_fixture(name: &str) -> eel_core::orchestrator::EpisodeRun {
    use eel_core::orchestrator::{run_exploration_episode, Explorer};
    use eel_core::prompt::PromptAssembler;
    use eel_core::store::{Selection, DEFAULT_SOUL};

    let kit = eel_core::Toolkit::builtin();
    let assembler = PromptAssembler::default();
    let config = eel_core::ExplorationConfig::default();
    let inst = fixture_instance();
    let selection = Selection::empty(DEFAULT_SOUL);
    let ledger = eel_core::ToolUsageLedger::new();
    let run = |gw: &dyn ChatBackend| {
        let ex = Explorer { toolkit: &kit, gateway: gw, assembler: &assembler, config: &config };
        run_exploration_episode(&ex, &inst, &selection, &ledger, &format!("fx-{name}")).unwrap()
    };
    let mock = scripted(name, |gw| {
        run(gw);
    });
    run(&mock)
}
