pub mod commands;
pub mod components;
pub mod config;
pub mod error;
pub mod runs;
pub mod table;

use std::path::PathBuf;

use chrono::Utc;
use clap::{Parser, Subcommand};
use folio_core::rl::AblationMode;

use crate::commands::Outcome;
use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};
use crate::runs::RunStore;

#[derive(Debug, Parser)]
#[command(name = "folio", version, about = "Forecast-then-allocate long/short portfolio pipeline")]
pub struct Cli {
    /// Experiment config (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the config's `seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Name of the run directory to create; must not exist yet.
    #[arg(long, global = true)]
    pub run_id: Option<String>,
    /// Root of the run store.
    #[arg(long, global = true, default_value = "runs")]
    pub out_dir: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load and validate prices, store the aligned panel and the split.
    Ingest,
    /// Train the forecaster (and the matched-budget baseline) and report test errors.
    Pretrain,
    /// Fine-tune the policy on the train split with the RL objective.
    Finetune {
        /// Pretrain run supplying the forecaster.
        #[arg(long)]
        base: Option<String>,
        /// Overrides `policy.mode`.
        #[arg(long)]
        mode: Option<AblationMode>,
    },
    /// Evaluate a fine-tuned policy and the baselines on the test split.
    Backtest {
        /// Finetune run supplying the policy.
        #[arg(long)]
        policy: String,
    },
    /// Fine-tune and evaluate every configured ablation mode.
    Ablate {
        #[arg(long)]
        base: Option<String>,
    },
    /// Compare backtest and ablation runs and emit ρ series for plotting.
    Report {
        #[arg(required = true)]
        runs: Vec<String>,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Ingest => "ingest",
            Command::Pretrain => "pretrain",
            Command::Finetune { .. } => "finetune",
            Command::Backtest { .. } => "backtest",
            Command::Ablate { .. } => "ablate",
            Command::Report { .. } => "report",
        }
    }
}

fn load_config(cli: &Cli) -> CliResult<ExperimentConfig> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::Config(format!("`{}` needs --config <file>", cli.command.name())))?;
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

pub fn execute(cli: &Cli) -> CliResult<Outcome> {
    let store = RunStore::new(&cli.out_dir);
    let run_id = cli
        .run_id
        .clone()
        .unwrap_or_else(|| format!("{}-{}", cli.command.name(), Utc::now().format("%Y%m%dT%H%M%S%3f")));
    match &cli.command {
        Command::Report { runs } => commands::report_cmd(&store, &run_id, cli.seed.unwrap_or(0), runs),
        cmd => {
            let cfg = load_config(cli)?;
            match cmd {
                Command::Ingest => commands::ingest(&store, &run_id, &cfg),
                Command::Pretrain => commands::pretrain_cmd(&store, &run_id, &cfg),
                Command::Finetune { base, mode } => {
                    commands::finetune_cmd(&store, &run_id, &cfg, base.as_deref(), *mode)
                }
                Command::Backtest { policy } => commands::backtest_cmd(&store, &run_id, &cfg, policy),
                Command::Ablate { base } => commands::ablate_cmd(&store, &run_id, &cfg, base.as_deref()),
                Command::Report { .. } => unreachable!(),
            }
        }
    }
}
