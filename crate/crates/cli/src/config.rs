//! Run configuration: one TOML file with a section per subsystem, then
//! command-line overrides on top.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use swarm_core::datagen::FilterConfig;
use swarm_core::intent::{OracleConfig, RemoteConfig};
use swarm_core::nav::NavParams;
use swarm_core::rmix::TrainConfig;
use swarm_core::world::WorldConfig;

use crate::error::CliError;

/// Where decision text comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    /// Scripted scoring policy.
    #[default]
    Oracle,
    /// OpenAI-compatible chat server.
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub episodes: usize,
    pub backend: Backend,
    /// Role-value network used to pick roles; scripted roles when unset.
    pub checkpoint: Option<PathBuf>,
    /// Record one line per environment step in simulation traces.
    pub trace_steps: bool,
    /// Collection target for `collect-data`; `filter.min_samples` when unset.
    pub samples: Option<usize>,
    pub world: WorldConfig,
    pub nav: NavParams,
    pub oracle: OracleConfig,
    pub train: TrainConfig,
    pub filter: FilterConfig,
    pub remote: RemoteConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            out_dir: PathBuf::from("runs/default"),
            episodes: 30,
            backend: Backend::Oracle,
            checkpoint: None,
            trace_steps: true,
            samples: None,
            world: WorldConfig::default(),
            nav: NavParams::default(),
            oracle: OracleConfig::default(),
            train: TrainConfig::default(),
            filter: FilterConfig::default(),
            remote: RemoteConfig::default(),
        }
    }
}

/// Flags shared by every subcommand. Each one overrides the matching key.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct Overrides {
    /// TOML configuration file.
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub episodes: Option<usize>,
    /// Swarm size.
    #[arg(long)]
    pub agents: Option<usize>,
    #[arg(long, value_enum)]
    pub backend: Option<Backend>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Training epochs.
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub samples: Option<usize>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// File, then flags, then environment (endpoint and key only), then
    /// validation.
    pub fn resolve(flags: &Overrides) -> Result<Self, CliError> {
        let mut cfg = match &flags.config {
            Some(p) => Self::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(s) = flags.seed {
            cfg.seed = s;
        }
        if let Some(o) = &flags.out {
            cfg.out_dir = o.clone();
        }
        if let Some(e) = flags.episodes {
            cfg.episodes = e;
        }
        if let Some(n) = flags.agents {
            cfg.world.n_agents = n;
        }
        if let Some(b) = flags.backend {
            cfg.backend = b;
        }
        if let Some(c) = &flags.checkpoint {
            cfg.checkpoint = Some(c.clone());
        }
        if let Some(e) = flags.epochs {
            cfg.train.n_epoch = e;
        }
        if let Some(s) = flags.samples {
            cfg.samples = Some(s);
        }
        cfg.remote = cfg.remote.with_env_overrides();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.world.validate()?;
        self.train.validate()?;
        self.filter.validate()?;
        if self.episodes == 0 {
            return Err(CliError::Config("episodes must be positive".into()));
        }
        Ok(())
    }

    /// Training config with the run seed applied.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }

    pub fn sample_target(&self) -> usize {
        self.samples.unwrap_or(self.filter.min_samples)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config is representable in TOML")
    }
}
