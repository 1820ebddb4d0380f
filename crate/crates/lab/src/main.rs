use std::path::PathBuf;
use std::process::ExitCode;

use cdp_lab::{load_config, run_experiment, ConfigError, ExperimentConfig, ExperimentKind, RunError};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "cdp-lab", version, about = "Run self-training and guided diffusion experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Monte Carlo trials of self-training on the Gaussian mixture
    SimulateGaussian(RunArgs),
    /// Train a score network on the 2D benchmark and save a checkpoint
    TrainDiffusion(RunArgs),
    /// Sample from a checkpoint with DDPM or DDIM
    Sample(RunArgs),
    /// DDIM sampling with contrastive guidance
    GuidedSample(RunArgs),
    /// Pick samples from a sample table
    Select(RunArgs),
    /// Class statistics of a sample table
    Evaluate(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config (TOML)
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `out` in the config
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the global seed
    #[arg(long)]
    seed: Option<u64>,
}

fn prepare(kind: ExperimentKind, args: &RunArgs) -> Result<(ExperimentConfig, PathBuf), RunError> {
    let mut cfg = load_config(&args.config)?;
    if cfg.kind != kind {
        return Err(ConfigError::Invalid(vec![format!(
            "kind: config is `{}` but the subcommand is `{}`",
            cfg.kind.name(),
            kind.name()
        )])
        .into());
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
        cfg = cfg.resolve();
    }
    if let Some(out) = &args.out {
        cfg.out = Some(out.clone());
    }
    let out = cfg
        .out
        .clone()
        .ok_or_else(|| ConfigError::Invalid(vec!["out: no output directory in the config or on the command line".into()]))?;
    cfg.validate()?;
    Ok((cfg, out))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (kind, args) = match &cli.command {
        Command::SimulateGaussian(a) => (ExperimentKind::SimulateGaussian, a),
        Command::TrainDiffusion(a) => (ExperimentKind::TrainDiffusion, a),
        Command::Sample(a) => (ExperimentKind::Sample, a),
        Command::GuidedSample(a) => (ExperimentKind::GuidedSample, a),
        Command::Select(a) => (ExperimentKind::Select, a),
        Command::Evaluate(a) => (ExperimentKind::Evaluate, a),
    };
    let result = prepare(kind, args).and_then(|(cfg, out)| run_experiment(&cfg, &out));
    match result {
        Ok(files) => {
            println!("{}", files.summary.display());
            ExitCode::SUCCESS
        }
        Err(RunError::Config(ConfigError::Invalid(list))) => {
            eprintln!("error: invalid config");
            for v in list {
                eprintln!("  {v}");
            }
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
