//! `rankdehaze`: dataset synthesis, training, forest fitting, dehazing and
//! evaluation from the command line.
//!
//! Exit codes: 0 on success, 1 on internal failure, 2 on bad input.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "rankdehaze", version, about = "Single-image dehazing with a ranking CNN")]
pub struct Cli {
    /// Worker threads (default: RANKDEHAZE_THREADS, else all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// TOML file (flat `key = value`) supplying defaults for the subcommand's flags.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Sample clear patches and synthesize a hazy training set.
    Synth(SynthArgs),
    /// Train the network on a dataset.
    Train(TrainArgs),
    /// Fit the transmission forest on network features.
    FitRf(FitRfArgs),
    /// Dehaze one image.
    Dehaze(DehazeArgs),
    /// Benchmark against synthesized cases.
    Eval(EvalArgs),
    /// Run an ablation study on procedural data.
    Ablate(AblateArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Directory of clear PNG/PPM images.
    #[arg(long, conflicts_with = "procedural")]
    pub images: Option<PathBuf>,
    /// Use generated textures instead of an image directory.
    #[arg(long)]
    pub procedural: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Clear patches to sample.
    #[arg(long)]
    pub patches: Option<usize>,
    /// Hazy versions per clear patch.
    #[arg(long)]
    pub per_patch: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub momentum: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// conv1 | pool1 | conv2 | conv3 | pool2 | none
    #[arg(long)]
    pub placement: Option<String>,
    /// Training history CSV (default: <out>.history.csv).
    #[arg(long)]
    pub history: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct FitRfArgs {
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Training patches drawn from the dataset.
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub trees: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Feature-importance CSV (default: <out>.importance.csv).
    #[arg(long)]
    pub importance: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct PipelineArgs {
    /// Predict transmission every N pixels.
    #[arg(long)]
    pub stride: Option<usize>,
    #[arg(long)]
    pub radius: Option<usize>,
    #[arg(long)]
    pub eps: Option<f64>,
    /// Dark-channel window (odd).
    #[arg(long)]
    pub window: Option<usize>,
}

#[derive(Args, Debug)]
pub struct DehazeArgs {
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub forest: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write the refined transmission as a 16-bit PNG
    /// (default path: <out stem>.transmission.png).
    #[arg(long, num_args = 0..=1, default_missing_value = "-")]
    pub emit_transmission: Option<PathBuf>,
    /// Also write the atmospheric light as text (<out>.airlight.txt).
    #[arg(long)]
    pub emit_airlight: bool,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Directory of case bundles (clear.png, disparity.png or meta.txt).
    #[arg(long)]
    pub cases: Option<PathBuf>,
    /// Generate this many procedural cases instead.
    #[arg(long, conflicts_with = "cases")]
    pub procedural_cases: Option<usize>,
    /// Side length of procedural cases.
    #[arg(long)]
    pub case_size: Option<usize>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub forest: Option<PathBuf>,
    /// Report CSV; an aligned text table is written next to it.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    /// ranking-vs-plain | placement | feature-layer | regressor | end-to-end | data-size
    #[arg(long)]
    pub name: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Clear patches (each hazed --per-patch times).
    #[arg(long)]
    pub patches: Option<usize>,
    #[arg(long)]
    pub per_patch: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub forest_samples: Option<usize>,
    #[arg(long)]
    pub trees: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {:#}", e.error);
            ExitCode::from(e.code())
        }
    }
}
