//! Experiment runner: configuration, subcommands and run directories.

pub mod commands;
pub mod config;
pub mod decoy;
pub mod error;
pub mod harness;
pub mod output;

pub use config::{Backend, Overrides, RunConfig};
pub use error::CliError;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use commands::Variant;

#[derive(Debug, Parser)]
#[command(name = "swarm", version, about = "Swarm coordination experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run episodes and write traces and per-episode returns.
    Simulate {
        #[command(flatten)]
        flags: Overrides,
    },
    /// Train the role-value network and mixer.
    TrainRmix {
        #[command(flatten)]
        flags: Overrides,
        /// Buffer written by `seed-offline`.
        #[arg(long)]
        buffer: Option<PathBuf>,
    },
    /// Fill a replay buffer with scripted episodes.
    SeedOffline {
        #[command(flatten)]
        flags: Overrides,
    },
    /// Collect labeled consensus samples.
    CollectData {
        #[command(flatten)]
        flags: Overrides,
    },
    /// Score samples and export the passing ones.
    FilterData {
        #[command(flatten)]
        flags: Overrides,
        /// `samples.jsonl` from `collect-data`.
        #[arg(long)]
        input: PathBuf,
    },
    /// Run an ablation matrix.
    Ablate {
        #[command(flatten)]
        flags: Overrides,
        #[arg(long, value_enum)]
        variant: Variant,
    },
    /// Evaluate over one or more swarm sizes.
    Eval {
        #[command(flatten)]
        flags: Overrides,
        /// Comma-separated swarm sizes; the configured size when omitted.
        #[arg(long)]
        sizes: Option<String>,
    },
}

/// Resolves the config and runs the command.
pub fn run(command: &Command) -> Result<output::Manifest, CliError> {
    match command {
        Command::Simulate { flags } => commands::simulate(&RunConfig::resolve(flags)?),
        Command::TrainRmix { flags, buffer } => commands::train_rmix(&RunConfig::resolve(flags)?, buffer.as_deref()),
        Command::SeedOffline { flags } => commands::seed_offline_cmd(&RunConfig::resolve(flags)?),
        Command::CollectData { flags } => commands::collect_data(&RunConfig::resolve(flags)?),
        Command::FilterData { flags, input } => commands::filter_data(&RunConfig::resolve(flags)?, input),
        Command::Ablate { flags, variant } => commands::ablate(&RunConfig::resolve(flags)?, *variant),
        Command::Eval { flags, sizes } => {
            let cfg = RunConfig::resolve(flags)?;
            let (sizes, args) = match sizes {
                Some(s) => (commands::parse_sizes(s)?, vec!["--sizes".to_string(), s.clone()]),
                None => (vec![cfg.world.n_agents], Vec::new()),
            };
            commands::eval_sizes(&cfg, &sizes, "eval", "eval", args)
        }
    }
}
