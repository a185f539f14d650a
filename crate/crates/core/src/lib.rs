//! Exploratory execution learning for tool-augmented time-series agents.

pub mod corpus;
pub mod gateway;
pub mod limit;
pub mod metrics;
pub mod model;
pub mod orchestrator;
pub mod prompt;
pub mod registry;
pub mod replay;
pub mod runner;
pub mod simulate;
pub mod store;
pub mod toolkit;

pub use gateway::{ChatBackend, GatewayError, HeuristicAgent, HeuristicOptions, RemoteBackend, ScriptedMock};
pub use metrics::{MetricReport, SupervisionMetric};
pub use model::{Answer, EpisodeOutcome, EvidenceClass, TaskInstance, TaskType};
pub use orchestrator::{ContractVerdict, EngineError, ExplorationConfig, Trace};
pub use registry::{ToolRegistry, ToolUsageLedger};
pub use runner::{Engine, PredictionRecord, RunConfig, RunSummary};
pub use store::ExperienceStore;
pub use toolkit::Toolkit;
