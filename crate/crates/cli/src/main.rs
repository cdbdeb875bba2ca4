use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use phenotime_cli::{execute, CliError, Command, RunConfig};

#[derive(Parser)]
#[command(name = "phenotime", version, about = "Incident phenotyping from longitudinal visit sequences")]
struct Args {
    #[command(subcommand)]
    command: Cmd,
    /// Flat `key = value` config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run directory for inputs and outputs.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
}

#[derive(Subcommand, Clone, Copy)]
enum Cmd {
    /// Write a planted-signal cohort, embeddings and ground truth.
    Generate,
    /// Attach silver labels to the cohort.
    Silver,
    /// Write synthetic replicas of the labeled patients.
    Augment,
    /// Silver pre-training with the gold head frozen.
    Pretrain,
    /// Semi-supervised fine-tuning.
    Train,
    /// Per-visit probability curves for a cohort.
    Predict,
    /// Metrics for prediction curves against gold labels.
    Evaluate,
}

fn run(args: &Args) -> Result<Vec<String>, CliError> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            RunConfig::from_text(&text)?
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let cmd = match args.command {
        Cmd::Generate => Command::Generate,
        Cmd::Silver => Command::Silver,
        Cmd::Augment => Command::Augment,
        Cmd::Pretrain => Command::Pretrain,
        Cmd::Train => Command::Train,
        Cmd::Predict => Command::Predict,
        Cmd::Evaluate => Command::Evaluate,
    };
    execute(cmd, &cfg, &args.out)
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(&args) {
        Ok(lines) => {
            for l in lines {
                println!("{l}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.line());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
