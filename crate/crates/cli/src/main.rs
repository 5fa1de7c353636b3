//! `tmrl`: generate data, train the update agent, track, evaluate, and check
//! gradients.

mod commands;
mod run_config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use run_config::RunConfig;
use tmrl_core::Result;

#[derive(Parser)]
#[command(
    name = "tmrl",
    version,
    about = "Tracking by detection with a learned template-update gate"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every config-driven command. Flags win over the config
/// file, `TM_<KEY>` variables and `--set`.
#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// `key = value` config file.
    #[arg(long, env = "TM_CONFIG")]
    pub config: Option<PathBuf>,
    #[arg(long, env = "TM_SEED")]
    pub seed: Option<u64>,
    /// Worker threads for per-sequence work.
    #[arg(long, env = "TM_JOBS", default_value_t = 1)]
    pub jobs: usize,
    /// Training budget in transitions.
    #[arg(long, env = "TM_ITERATIONS")]
    pub iterations: Option<u64>,
    #[arg(long, env = "TM_OUT")]
    pub out: Option<PathBuf>,
    #[arg(long, env = "TM_CHECKPOINT")]
    pub checkpoint: Option<PathBuf>,
    /// Extra `key=value` setting; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

/// Variables read by clap itself rather than as config keys.
const FLAG_VARS: &[&str] = &[
    "TM_CONFIG",
    "TM_SEED",
    "TM_JOBS",
    "TM_ITERATIONS",
    "TM_OUT",
    "TM_CHECKPOINT",
];

#[derive(Subcommand)]
enum Command {
    /// Render synthetic sequences.
    Synth {
        #[command(flatten)]
        common: Common,
        /// Replace existing sequence directories.
        #[arg(long)]
        force: bool,
    },
    /// Train the agent and write a checkpoint plus a training curve.
    Train {
        #[command(flatten)]
        common: Common,
        /// Dataset directory (a sequence or a directory of sequences).
        data: Option<PathBuf>,
    },
    /// Track every sequence and write masks, diagnostics and confidences.
    Track {
        #[command(flatten)]
        common: Common,
        data: Option<PathBuf>,
    },
    /// Score predicted masks against ground truth.
    Eval {
        #[command(flatten)]
        common: Common,
        pred: PathBuf,
        gt: PathBuf,
    },
    /// Compare analytic and finite-difference gradients.
    Gradcheck {
        #[arg(long, env = "TM_SEED", default_value_t = 0)]
        seed: u64,
        #[arg(long, hide = true)]
        corrupt_gradient: bool,
    },
}

/// Defaults, then the config file, `TM_` keys, `--set`, and finally flags.
fn load_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &common.config {
        let text = std::fs::read_to_string(path).map_err(|source| tmrl_core::Error::Io {
            context: path.display().to_string(),
            source,
        })?;
        cfg.apply_text(&text)?;
    }
    cfg.apply_env(std::env::vars(), FLAG_VARS)?;
    for s in &common.set {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| tmrl_core::Error::Config(format!("--set `{s}`: expected key=value")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(n) = common.iterations {
        cfg.iterations = n;
    }
    if let Some(out) = &common.out {
        cfg.out = Some(out.clone());
    }
    if let Some(c) = &common.checkpoint {
        cfg.checkpoint = Some(c.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Synth { common, force } => {
            let cfg = load_config(&common)?;
            commands::synth(&cfg, force)?;
        }
        Command::Train { common, data } => {
            let mut cfg = load_config(&common)?;
            if data.is_some() {
                cfg.data = data;
            }
            commands::train(&cfg, common.jobs)?;
        }
        Command::Track { common, data } => {
            let mut cfg = load_config(&common)?;
            if data.is_some() {
                cfg.data = data;
            }
            commands::track(&cfg, common.jobs)?;
        }
        Command::Eval { common, pred, gt } => {
            let cfg = load_config(&common)?;
            commands::eval(&cfg, &pred, &gt, common.jobs)?;
        }
        Command::Gradcheck { seed, corrupt_gradient } => return commands::gradcheck(seed, corrupt_gradient),
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
