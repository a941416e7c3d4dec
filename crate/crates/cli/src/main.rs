//! `pointy` command-line driver.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 numeric failure
//! (NaN/Inf or divergence).

mod commands;
mod resolve;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "pointy", version, about = "Tokenizer-free point-cloud transformer")]
pub struct Cli {
    /// Seed for data generation, splits, initialization and training.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[arg(long, global = true, value_enum)]
    pub precision: Option<PrecisionArg>,

    /// JSON run config layered between the preset and command-line flags.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Root for outputs whose location is not given explicitly.
    #[arg(long, global = true, env = "POINTY_OUT_DIR", default_value = "runs")]
    pub out_root: PathBuf,

    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PrecisionArg {
    F32,
    F64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MergeArg {
    Addition,
    Linear,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic clouds as PCF files plus a manifest.
    Synth(SynthArgs),
    /// Train a model and write checkpoints and metrics.
    Train(TrainArgs),
    /// Test accuracy of a checkpoint.
    Eval(EvalArgs),
    /// Prototype-based zero-shot transfer of a checkpoint.
    Zeroshot(ZeroshotArgs),
    /// Merge histories into long-format CSV, optionally running a sweep first.
    Report(ReportArgs),
    /// Itemized parameter and FLOP counts.
    Params(ParamsArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, value_delimiter = ',', default_value = "sphere,cube,cylinder,plane")]
    pub classes: Vec<String>,
    #[arg(long, default_value_t = 200)]
    pub per_class: usize,
    #[arg(long, default_value_t = 512)]
    pub points: usize,
    #[arg(long, default_value_t = 0.02)]
    pub noise: f64,
    /// Output directory (default: <out-root>/synth).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    /// Architecture preset: small or base.
    #[arg(long)]
    pub preset: Option<String>,
    /// `synth:default`, `synth:transfer`, `synth:<class,...>`,
    /// `manifest:<path>` or `manifest:<train>,<test>`.
    #[arg(long)]
    pub data: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Points per cloud.
    #[arg(long)]
    pub points: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub patches: Option<usize>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long, value_enum)]
    pub merge: Option<MergeArg>,
    /// Disable token merging.
    #[arg(long)]
    pub flat: bool,
    #[arg(long)]
    pub no_positional: bool,
    #[arg(long)]
    pub no_augment: bool,
    /// Stop once test accuracy reaches this percentage.
    #[arg(long)]
    pub stop_at_oa: Option<f64>,
    /// Parameter-name prefixes to keep fixed.
    #[arg(long, value_delimiter = ',')]
    pub freeze: Vec<String>,
    /// Record zero wall time so metric files are reproducible.
    #[arg(long)]
    pub deterministic: bool,
    /// Run directory (default: <out-root>/train-s<seed>).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Print the resolved config and parameter count, then exit.
    #[arg(long)]
    pub dry_run: bool,
    /// Continue from a checkpoint; only --epochs and --out may change.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Data spec; defaults to the checkpoint's own test split.
    #[arg(long)]
    pub data: Option<String>,
}

#[derive(Debug, Args)]
pub struct ZeroshotArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Target data spec, split 85/15 into prototype and test sets.
    #[arg(long, default_value = "synth:transfer")]
    pub target: String,
    #[arg(long, value_delimiter = ',', default_value = "1,3,5")]
    pub topk: Vec<usize>,
    /// JSON report path (default: next to the checkpoint).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Per-sample ranking CSV.
    #[arg(long)]
    pub rankings: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// History CSV files to merge.
    pub histories: Vec<PathBuf>,
    /// Merged long-format CSV (default: <out-root>/report.csv).
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Train one run per value first, e.g. `points=256,512,1024,2048`.
    #[arg(long)]
    pub sweep: Option<String>,
    #[command(flatten)]
    pub train: TrainArgs,
}

#[derive(Debug, Args)]
pub struct ParamsArgs {
    #[arg(long, default_value = "small")]
    pub preset: String,
    #[arg(long, default_value_t = 40)]
    pub classes: usize,
    /// Input points for the FLOP count.
    #[arg(long, default_value_t = 2048)]
    pub points: usize,
    #[arg(long, value_enum, default_value = "addition")]
    pub merge: MergeArg,
    /// Emit JSON instead of a table.
    #[arg(long)]
    pub json: bool,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let numeric = err
        .chain()
        .any(|c| c.downcast_ref::<pointy::Error>().is_some_and(pointy::Error::is_numeric));
    if numeric {
        3
    } else {
        2
    }
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
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure {n} threads: {e}");
            return ExitCode::from(2);
        }
    }
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
