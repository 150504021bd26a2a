use std::process::ExitCode;

use clap::{Parser, Subcommand};
use clft::commands::{
    self, BenchArgs, EvalArgs, GenSyntheticArgs, GradcheckArgs, MakeMasksArgs, ProjectArgs, TrainArgs,
};
use clft::Error;

/// Camera-LiDAR fusion transformer: projection, training, evaluation and
/// diagnostics.
#[derive(Debug, Parser)]
#[command(name = "clft", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Project a point cloud onto the camera planes.
    Project(ProjectArgs),
    /// Rasterize 3D boxes into a class mask.
    MakeMasks(MakeMasksArgs),
    /// Write a seeded synthetic dataset.
    GenSynthetic(GenSyntheticArgs),
    /// Train a model and write a checkpoint plus a JSON-lines log.
    Train(TrainArgs),
    /// Evaluate a checkpoint with a weather-stratified report.
    Eval(EvalArgs),
    /// Run finite-difference gradient checks.
    Gradcheck(GradcheckArgs),
    /// Time inference of a checkpoint.
    Bench(BenchArgs),
}

/// Honors `CLFT_THREADS` for the worker pool.
fn configure_threads() -> Result<(), Error> {
    let Ok(value) = std::env::var("CLFT_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Usage(format!("CLFT_THREADS must be a positive integer, got {value:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Usage(e.to_string()))
}

fn run(cli: &Cli) -> Result<(), Error> {
    configure_threads()?;
    match &cli.command {
        Command::Project(a) => commands::project(a),
        Command::MakeMasks(a) => commands::make_masks(a),
        Command::GenSynthetic(a) => commands::gen_synthetic(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
        Command::Bench(a) => commands::bench(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("clft: {e}");
            ExitCode::from(if e.is_usage() { 2 } else { 1 })
        }
    }
}
