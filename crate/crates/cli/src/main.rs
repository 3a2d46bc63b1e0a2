use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use dexgrasp_cli::{pipeline, run_stage, stats, synth_demos, CliError, PipelineConfig, Stage};

/// Grasp dataset generation and policy training from human demonstrations.
#[derive(Debug, Parser)]
#[command(name = "dexgrasp", version)]
struct Args {
    /// Pipeline config document (JSON). Built-in defaults when omitted.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config's global seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the config's output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write synthetic human demos to the output directory.
    SynthDemos,
    /// Map human demos onto the robot hand.
    Retarget,
    /// Transfer retargeted demos to new object poses.
    Template,
    /// Perturb and verify templated trajectories in simulation.
    Refine,
    /// Translate refined trajectories and re-verify them.
    Augment,
    /// Connect random initial hand states to verified trajectories.
    Funnel,
    /// Behavior-clone a policy on the final dataset.
    Train,
    /// Closed-loop evaluation of the policy and baselines.
    Eval,
    /// Per-stage trajectory counts.
    Stats {
        /// Summarize this dataset file instead of the output directory.
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Every stage in order.
    Pipeline,
    /// Print the effective config.
    Config,
}

fn load(args: &Args) -> Result<PipelineConfig, CliError> {
    let mut cfg = match &args.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &args.out {
        cfg.out_dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(args: &Args) -> Result<(), CliError> {
    let cfg = load(args)?;
    let stage = match &args.command {
        Command::SynthDemos => {
            let path = synth_demos(&cfg)?;
            println!("{}", path.display());
            return Ok(());
        }
        Command::Stats { dataset } => return stats(&cfg, dataset.as_deref()).map(|_| ()),
        Command::Pipeline => return pipeline(&cfg),
        Command::Config => {
            let text = serde_json::to_string_pretty(&cfg).map_err(|e| CliError::Other(e.to_string()))?;
            println!("{text}");
            return Ok(());
        }
        Command::Retarget => Stage::Retarget,
        Command::Template => Stage::Template,
        Command::Refine => Stage::Refine,
        Command::Augment => Stage::Augment,
        Command::Funnel => Stage::Funnel,
        Command::Train => Stage::Train,
        Command::Eval => Stage::Eval,
    };
    run_stage(&cfg, stage)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = Args::parse();
    match run(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
