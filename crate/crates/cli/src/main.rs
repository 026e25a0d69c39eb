#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fusionnet::model::{Architecture, Preset};

#[derive(Parser, Debug)]
#[command(name = "fusionnet", version, about = "Dual-stream deformable fusion classifier")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model with cross-entropy and write a checkpoint plus metrics.
    Train(TrainArgs),
    /// Distill two teachers into a fusion student and compare against plain training.
    Distill(DistillArgs),
    /// Score a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Finite-difference gradient checks over every differentiable operator.
    Gradcheck(GradcheckArgs),
    /// Exact t-SNE of a checkpoint's features, as CSV and SVG.
    Embed(EmbedArgs),
    /// Parameter counts, tensor shapes and multiply-accumulates of a preset.
    Params(ParamsArgs),
}

/// Flags shared by the training commands.
#[derive(Args, Debug, Default)]
struct TrainFlags {
    /// `key = value` file (e.g. a previous run.cfg); flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// cifar10:<dir> | folder:<dir> | synth:<C>x<N>x<HW>, with optional @frac=, @split=, @classes=
    #[arg(long)]
    data: Option<String>,
    #[arg(long)]
    preset: Option<Preset>,
    #[arg(long)]
    arch: Option<Architecture>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    eta_min: Option<f64>,
    #[arg(long)]
    accum_steps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    common: TrainFlags,
}

#[derive(Args, Debug)]
struct DistillArgs {
    #[command(flatten)]
    common: TrainFlags,
    #[arg(long)]
    teacher_a: Option<PathBuf>,
    #[arg(long)]
    teacher_b: Option<PathBuf>,
    /// Train teachers that were not supplied (default true).
    #[arg(long)]
    train_teachers: Option<bool>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    temperature: Option<f64>,
    /// Keep the 1/T² softening factor next to the T² gradient rescaling.
    #[arg(long)]
    literal_t2: Option<bool>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    ckpt: Option<PathBuf>,
    #[arg(long)]
    data: Option<String>,
    /// Seed for synthetic data and splits; defaults to the checkpoint's.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    #[arg(long)]
    preset: Option<Preset>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct EmbedArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    ckpt: Option<PathBuf>,
    #[arg(long)]
    data: Option<String>,
    #[arg(long)]
    perplexity: Option<f64>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ParamsArgs {
    #[arg(long)]
    preset: Option<Preset>,
    #[arg(long)]
    arch: Option<Architecture>,
    /// Head width; defaults to the preset's.
    #[arg(long)]
    classes: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => commands::train(a),
        Command::Distill(a) => commands::distill(a),
        Command::Eval(a) => commands::eval(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
        Command::Embed(a) => commands::embed(a),
        Command::Params(a) => commands::params(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                fusionnet::Error::Config { .. } => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}
