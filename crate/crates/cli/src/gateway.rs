use std::path::PathBuf;

use clap::Args;

use eel_core::gateway::{ChatBackend, HeuristicAgent, HeuristicOptions, RecordingBackend, RemoteBackend, RemoteConfig, ScriptedMock, ENV_API_BASE, ENV_API_KEY};

use crate::Failure;

#[derive(Debug, Clone, Args)]
pub struct GatewayArgs {
    /// Replay model turns from a recorded script.
    #[arg(long, conflicts_with_all = ["mock_policy", "api_base"])]
    pub mock_script: Option<PathBuf>,
    /// Built-in offline policy: heuristic, heuristic-no-memory.
    #[arg(long, conflicts_with = "api_base")]
    pub mock_policy: Option<String>,
    /// OpenAI-compatible endpoint.
    #[arg(long, env = ENV_API_BASE)]
    pub api_base: Option<String>,
    #[arg(long, env = ENV_API_KEY, hide_env_values = true)]
    pub api_key: Option<String>,
    /// Save every model turn of this run as a script.
    #[arg(long)]
    pub record_script: Option<PathBuf>,
}

pub enum Gateway {
    Plain(Box<dyn ChatBackend>),
    Recording(RecordingBackend<Box<dyn ChatBackend>>, PathBuf),
}

impl Gateway {
    pub fn backend(&self) -> &dyn ChatBackend {
        match self {
            Gateway::Plain(b) => b.as_ref(),
            Gateway::Recording(r, _) => r,
        }
    }

    pub fn finish(&self) -> Result<(), Failure> {
        if let Gateway::Recording(r, path) = self {
            r.save(path).map_err(|e| Failure::config(format!("cannot save script: {e}")))?;
        }
        Ok(())
    }
}

fn policy(name: &str) -> Result<Box<dyn ChatBackend>, Failure> {
    let options = match name {
        "heuristic" => HeuristicOptions::default(),
        "heuristic-no-memory" => HeuristicOptions { ignore_memory: true, ..HeuristicOptions::default() },
        other => return Err(Failure::config(format!("unknown mock policy {other}"))),
    };
    Ok(Box::new(HeuristicAgent::with_options(options)))
}

impl GatewayArgs {
    /// Script, then policy, then remote endpoint; the heuristic policy when
    /// nothing is given.
    pub fn open(&self) -> Result<Gateway, Failure> {
        let backend: Box<dyn ChatBackend> = if let Some(path) = &self.mock_script {
            Box::new(ScriptedMock::load(path).map_err(|e| Failure::config(format!("{}: {e}", path.display())))?)
        } else if let Some(name) = &self.mock_policy {
            policy(name)?
        } else if self.api_base.is_some() {
            let cfg = RemoteConfig::from_env(self.api_base.clone(), self.api_key.clone()).map_err(|e| Failure::config(e.to_string()))?;
            Box::new(RemoteBackend::new(cfg).map_err(|e| Failure::config(e.to_string()))?)
        } else {
            policy("heuristic")?
        };
        Ok(match &self.record_script {
            Some(path) => Gateway::Recording(RecordingBackend::new(backend), path.clone()),
            None => Gateway::Plain(backend),
        })
    }
}
