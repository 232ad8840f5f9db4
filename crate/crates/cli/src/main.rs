use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use parpow::harness::{
    cmd_evaluate, cmd_fairness, cmd_replay, cmd_sweep, cmd_train, to_csv, write_output, ExperimentConfig, PolicySpec,
    Preset,
};
use parpow::protocol::ProtocolKind;

/// Virtual-time simulator for sequential and parallel proof-of-work.
#[derive(Parser, Debug)]
#[command(name = "parpow", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// JSON experiment configuration.
    #[arg(long, global = true, value_name = "PATH", conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in configuration used when no file is given.
    #[arg(long, global = true, value_enum)]
    preset: Option<PresetArg>,
    /// Output file; relative paths honor PARPOW_OUT_DIR.
    #[arg(long, global = true, value_name = "PATH")]
    out: Option<PathBuf>,
    /// Worker threads (defaults to one per core).
    #[arg(long, global = true, value_name = "N")]
    workers: Option<usize>,
    /// Overrides the configuration's base seed.
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum PresetArg {
    PaperEval,
    Deployment,
}

#[derive(Args, Debug)]
struct Scenario {
    #[arg(long)]
    protocol: ProtocolKind,
    #[arg(long)]
    alpha: f64,
    #[arg(long)]
    gamma: f64,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Evaluates every policy over the protocol/alpha/gamma grid.
    Sweep,
    /// Reward share per hashrate in all-honest networks.
    Fairness,
    /// Trains a Q-table for one scenario.
    Train {
        #[command(flatten)]
        scenario: Scenario,
        /// Overrides the configured episode budget.
        #[arg(long)]
        episodes: Option<u64>,
    },
    /// Evaluates one policy in one scenario.
    Evaluate {
        #[command(flatten)]
        scenario: Scenario,
        /// honest, sm1, sm1-inclusive, learned, or qtable:PATH.
        #[arg(long)]
        policy: PolicySpec,
        /// Overrides the configured number of rollouts.
        #[arg(long)]
        rollouts: Option<u64>,
    },
    /// Revalidates an event log and prints per-epoch rewards.
    Replay {
        log: PathBuf,
        /// Emit the block DAG in Graphviz format instead of the summary.
        #[arg(long)]
        dot: bool,
    },
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let mut config = match (&common.config, common.preset) {
        (Some(path), _) => ExperimentConfig::load(path)?,
        (None, Some(PresetArg::Deployment)) => ExperimentConfig::preset(Preset::Deployment),
        (None, _) => ExperimentConfig::preset(Preset::PaperEval),
    };
    if let Some(seed) = common.seed {
        config.seed = seed;
        config.fairness.seed = seed;
    }
    Ok(config)
}

fn emit(out: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match out {
        Some(path) => {
            let written = write_output(path, bytes)?;
            eprintln!("wrote {}", written.display());
        }
        None => std::io::stdout().write_all(bytes)?,
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.common.workers {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring worker pool")?;
    }
    let out = cli.common.out.as_deref();
    match cli.command {
        Command::Sweep => {
            let config = load_config(&cli.common)?;
            let path = cmd_sweep(&config, out)?;
            eprintln!("wrote {}", path.display());
        }
        Command::Fairness => {
            let config = load_config(&cli.common)?;
            let path = cmd_fairness(&config, out)?;
            eprintln!("wrote {}", path.display());
        }
        Command::Train { scenario, episodes } => {
            let mut config = load_config(&cli.common)?;
            if let Some(n) = episodes {
                config.training.episodes = n;
            }
            let path = cmd_train(&config, scenario.protocol, scenario.alpha, scenario.gamma, out)?;
            eprintln!("wrote {}", path.display());
        }
        Command::Evaluate { scenario, policy, rollouts } => {
            let mut config = load_config(&cli.common)?;
            if let Some(n) = rollouts {
                config.n_rollouts = n;
            }
            let (row, _) = cmd_evaluate(&config, scenario.protocol, scenario.alpha, scenario.gamma, &policy)?;
            emit(out, &to_csv(&[row])?)?;
        }
        Command::Replay { log, dot } => {
            let report = cmd_replay(&log)?;
            let text = if dot { report.dot() } else { report.summary() };
            emit(out, text.as_bytes())?;
            if !report.invalid.is_empty() {
                anyhow::bail!("{} invalid proofs-of-work in {}", report.invalid.len(), log.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
