//! `kdgan`: train teachers, distill students, evaluate checkpoints and count costs.
//!
//! Exit statuses: 0 success, 2 configuration error, 3 training divergence,
//! 4 I/O or checkpoint error, 5 incompatible teacher/student.

mod commands;
mod failure;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "kdgan", version, about = "One-class novelty detection with distilled GANs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
pub struct Common {
    /// Experiment configuration (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory; overrides `output_dir` in the config.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Seed for every training stage; overrides the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Replace existing outputs.
    #[arg(long)]
    pub overwrite: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Train a teacher GAN; writes <out>/teacher/final.
    TrainTeacher(Common),
    /// Distill a student from the configured teacher checkpoint.
    Distill {
        #[command(flatten)]
        common: Common,
        /// Structure 1-4; overrides the config.
        #[arg(long)]
        structure: Option<u32>,
    },
    /// Two-step progressive distillation; writes <out>/step1 and <out>/step2.
    Progressive {
        #[command(flatten)]
        common: Common,
        /// 23 or 24; overrides the config.
        #[arg(long)]
        variant: Option<u32>,
    },
    /// Score a checkpoint's generator on the configured test split.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Checkpoint directory (holding manifest.json and params.bin).
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Print parameter and FLOP counts.
    Count(commands::CountArgs),
    /// Train and evaluate every class x repeat cell of the configured suite.
    Suite(Common),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::TrainTeacher(c) => commands::train_teacher(&c),
        Command::Distill { common, structure } => commands::distill(&common, structure),
        Command::Progressive { common, variant } => commands::progressive(&common, variant),
        Command::Eval { common, checkpoint } => commands::eval(&common, &checkpoint),
        Command::Count(args) => commands::count(&args),
        Command::Suite(c) => commands::suite(&c),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.status)
        }
    }
}
