//! `segloo`: file-based pipeline stages for segment-wise leave-one-out
//! adversarial detection.

mod commands;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use segloo_core::Error;

#[derive(Parser)]
#[command(name = "segloo", version, about = "Segment-wise leave-one-out adversarial detection")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Debug, Default)]
pub struct GlobalArgs {
    /// JSON file supplying defaults for any option (top-level keys, or an
    /// object named after the subcommand).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads for per-image stages.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Train the classifier on the CIFAR-10 training files.
    TrainModel(commands::train_model::TrainModelArgs),
    /// Craft adversarial images.
    Attack(commands::attack::AttackArgs),
    /// Write label maps for a batch of images.
    Segment(commands::segment::SegmentArgs),
    /// Leave-one-out IQR features for benign and adversarial images.
    Extract(commands::extract::ExtractArgs),
    /// Fit a detector on a feature file.
    TrainDetector(commands::train_detector::TrainDetectorArgs),
    /// Score a detector on the held-out split of its feature file.
    Evaluate(commands::evaluate::EvaluateArgs),
    /// Time and memory of feature extraction per cell.
    Bench(commands::bench::BenchArgs),
    /// Collect evaluations into one CSV.
    Report(commands::report::ReportArgs),
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::InvalidArgument(_) => 2,
        Error::NonFinite(_) => 4,
        _ => 3,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::TrainModel(args) => commands::train_model::run(&cli.global, args),
        Command::Attack(args) => commands::attack::run(&cli.global, args),
        Command::Segment(args) => commands::segment::run(&cli.global, args),
        Command::Extract(args) => commands::extract::run(&cli.global, args),
        Command::TrainDetector(args) => commands::train_detector::run(&cli.global, args),
        Command::Evaluate(args) => commands::evaluate::run(&cli.global, args),
        Command::Bench(args) => commands::bench::run(&cli.global, args),
        Command::Report(args) => commands::report::run(&cli.global, args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}
