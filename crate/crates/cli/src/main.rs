//! `dss`: corpus generation, training, separation, discovery, evaluation
//! and stitching simulation from one binary.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "dss", version, about = "Directed speech separation toolkit")]
pub struct Cli {
    /// Run configuration (TOML). Omitted sections take their defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Root seed; overrides `seed` from the config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate the synthetic corpus and its manifests.
    GenCorpus(GenCorpusArgs),
    /// Train a DSS or USS separator.
    Train(TrainArgs),
    /// Separate one recording into per-speaker WAV files.
    Separate(SeparateArgs),
    /// Discover speaker profiles in one recording.
    Discover(DiscoverArgs),
    /// Score a system on a manifest.
    Evaluate(EvaluateArgs),
    /// Monte Carlo of stitching error propagation.
    StitchSim(StitchSimArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum System {
    Dss,
    Uss,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum EvalSystem {
    Dss,
    Uss,
    Oracle,
    Mixture,
}

#[derive(Args, Debug)]
pub struct GenCorpusArgs {
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long, value_enum)]
    pub system: System,
    /// Manifest of real-style conversations.
    #[arg(long)]
    pub real: PathBuf,
    /// Manifest of fully overlapped pairs.
    #[arg(long)]
    pub syn: PathBuf,
    /// Directory receiving the checkpoint and loss history.
    #[arg(long)]
    pub out: PathBuf,
    /// Continue from an existing checkpoint instead of a fresh model.
    #[arg(long)]
    pub init: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub steps_per_epoch: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub sampling_coefficient: Option<f64>,
}

#[derive(Args, Debug)]
pub struct SeparateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Chunk length in seconds (default 8).
    #[arg(long)]
    pub chunk_s: Option<f64>,
    /// Chunk overlap in seconds (default 0 for DSS, 4 for USS).
    #[arg(long)]
    pub overlap_s: Option<f64>,
}

#[derive(Args, Debug)]
pub struct DiscoverArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Number of speakers N (default from config, 2).
    #[arg(long)]
    pub n: Option<usize>,
    /// Cluster cap M (default from config, 6).
    #[arg(long)]
    pub m: Option<usize>,
    /// Where to write the profile dump.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[arg(long, value_enum)]
    pub system: EvalSystem,
    /// Checkpoint, required for dss and uss.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Recording durations in seconds, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub durations: Option<Vec<f64>>,
    /// Directory receiving report.txt and report.csv.
    #[arg(long)]
    pub out: PathBuf,
    /// White noise at this SNR (dB) on every USS chunk output.
    #[arg(long)]
    pub chunk_noise_snr: Option<f64>,
    /// DSS only: one row per cluster cap, with profile purity.
    #[arg(long, value_delimiter = ',')]
    pub m_values: Option<Vec<usize>>,
}

#[derive(Args, Debug)]
pub struct StitchSimArgs {
    #[arg(long)]
    pub chunks: usize,
    #[arg(long)]
    pub flip_prob: f64,
    #[arg(long, default_value_t = 10_000)]
    pub trials: usize,
    /// CSV with one row per chunk position.
    #[arg(long)]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).format_timestamp(None).init();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // one-line diagnostic even when the cause spans lines
            let text = e.to_string();
            let msg: Vec<&str> = text.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
            eprintln!("error: {}", msg.join(" | "));
            e.exit_code()
        }
    }
}
