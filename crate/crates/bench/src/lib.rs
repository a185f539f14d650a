//! Benchmark inputs shared by the criterion targets.

use eel_core::corpus::{generate_synthetic_corpus, FamilySpec, SyntheticSpec};
use eel_core::TaskInstance;

pub fn seasonal(count: usize, seed: u64) -> Vec<TaskInstance> {
    let spec = SyntheticSpec { families: vec![FamilySpec { count, ..FamilySpec::default() }], seed, tag: "bench".into() };
    generate_synthetic_corpus(&spec, seed).expect("default family is valid")
}
