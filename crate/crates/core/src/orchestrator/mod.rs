//! Episode control: exploration with parallel branches and a post-episode
//! contract check, inference with a deterministic fallback, and the JSONL
//! traces both write.

mod answer;
mod contract;
mod episode;
mod inference;
mod slots;
mod trace;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use answer::{final_type, parse_answer, parse_summary};
pub use contract::{
    enforce_exploration_contract, evaluated_sets, final_text, spawned_branches, BranchSummary, ContractVerdict,
    Violation,
};
pub use episode::{run_exploration_episode, EpisodeRun, Explorer};
pub use inference::{fallback_answer, run_inference, InferenceRun};
pub use slots::{answer_category, assign_branch_slots, branch_id, prior_tool, SlotAssignment};
pub use trace::{Trace, TraceError, TraceEvent, TraceHeader, TraceKind, ENGINE_VERSION, MAIN_BRANCH, TRACE_FORMAT};

use crate::gateway::GatewayError;
use crate::prompt::PromptError;
use crate::registry::RegistryError;
use crate::toolkit::CapabilityError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExplorationConfig {
    pub min_valid_candidates: usize,
    pub branch_slots: usize,
    /// Gateway turns per branch.
    pub max_steps: usize,
    /// Gateway turns for the main agent.
    pub main_max_steps: usize,
    pub spawn_rounds: usize,
    pub alpha: f64,
    pub seed: u64,
    pub require_prior_and_alternative: bool,
    pub parallel_branches: bool,
}

impl Default for ExplorationConfig {
    fn default() -> Self {
        Self {
            min_valid_candidates: 2,
            branch_slots: 2,
            max_steps: 6,
            main_max_steps: 8,
            spawn_rounds: 1,
            alpha: crate::registry::DEFAULT_ALPHA,
            seed: 0,
            require_prior_and_alternative: true,
            parallel_branches: true,
        }
    }
}

impl ExplorationConfig {
    pub fn digest(&self) -> String {
        let raw = serde_json::to_string(self).expect("config serializes");
        hex::encode(&Sha256::digest(raw.as_bytes())[..8])
    }

    /// Per-episode seed derived from the run seed and the instance id.
    pub fn episode_seed(&self, instance_id: &str) -> u64 {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(instance_id.as_bytes());
        u64::from_le_bytes(h.finalize()[..8].try_into().expect("8 bytes"))
    }
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Capability(#[from] CapabilityError),
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Store(#[from] crate::store::StoreError),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error("{0}")]
    Invalid(String),
}
