//! Golden prompt frames. `EEL_BLESS=1` rewrites them.

mod common;

use eel_core::gateway::{ChatMessage, HeuristicAgent};
use eel_core::prompt::{build_branch_prompt, build_exploration_prompt, build_inference_prompt, fingerprint, PromptBundle};
use eel_core::registry::Mode;
use eel_core::store::{Selection, DEFAULT_SOUL};
use eel_core::{Engine, ExperienceStore, RunConfig, Toolkit};

fn render(b: &PromptBundle) -> String {
    let mut out = String::new();
    for m in b.messages() {
        let ChatMessage { role, content, .. } = m;
        out.push_str(&format!("=== {role:?}\n{content}\n"));
    }
    out.push_str(&format!("=== tools\n{}\n", b.tool_names().join("\n")));
    out
}

fn check(name: &str, got: &str) {
    let path = common::data_dir().join("frames").join(format!("{name}.txt"));
    if common::blessing() {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(&path, got).unwrap();
    }
    let want = std::fs::read_to_string(&path).unwrap_or_else(|_| panic!("missing {}; bless with EEL_BLESS=1", path.display()));
    assert_eq!(got, want, "frame {name} changed");
}

#[test]
fn frames_match_golden_files() {
    let kit = Toolkit::builtin();
    let view = common::fixture_instance().without_ground_truth();
    let empty = Selection::empty(DEFAULT_SOUL);
    let run = common::run_fixture("compliant");

    let main_tools = kit.registry().visible(&view.scope, Mode::Exploration);
    check("exploration", &render(&build_exploration_prompt(&view, &empty, &run.slots, &main_tools)));
    let slot = &run.slots[0];
    let branch_tools: Vec<_> = main_tools.iter().copied().filter(|t| slot.visible.contains(&t.tool_id)).collect();
    check("branch", &render(&build_branch_prompt(&view, &empty, slot, &branch_tools)));

    let store = ExperienceStore::in_memory();
    let learn = common::seasonal("frames", 40, 1);
    Engine::new(&kit, &HeuristicAgent::new(), &store, RunConfig::default()).unwrap().explore(&learn).unwrap();
    let sel = store.retrieve(&view.scope, &fingerprint(&view)).unwrap();
    assert!(sel.has_prior(), "{:?}", store.memory(&view.scope).unwrap().rules.iter().map(|r| (&r.summary, r.injectable)).collect::<Vec<_>>());
    let inf_tools = kit.registry().visible(&view.scope, Mode::Inference);
    let inf = build_inference_prompt(&view, &sel, &inf_tools).unwrap();
    check("inference", &render(&inf));
    for t in inf.tool_names() {
        assert!(kit.registry().get(t).unwrap().category.is_task_facing(), "{t}");
    }
}
