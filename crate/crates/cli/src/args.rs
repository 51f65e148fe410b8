use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(name = "pmn", version, about = "Sensing-node selection and power allocation for multi-target tracking")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Monte-Carlo tracking for each requested selector and power method.
    Track(TrackArgs),
    /// Generate labelled instances and train the unrolled network.
    Train(TrainArgs),
    /// Per-iteration cost traces of the iterative selectors on one instance.
    Converge(ConvergeArgs),
    /// Wall-clock timing of selectors and power allocators.
    Bench(BenchArgs),
}

/// Flags shared by every command.
#[derive(Debug, Clone, Args, Serialize)]
pub struct Common {
    /// Scenario JSON; built-in defaults when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Override the per-target node budget.
    #[arg(long)]
    pub nmax: Option<usize>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TrackArgs {
    #[command(flatten)]
    pub common: Common,
    /// Comma-separated selectors: dan, mm-admm-1, mm-admm-2, es, nearest.
    #[arg(long, default_value = "dan,es,nearest")]
    pub methods: String,
    /// Comma-separated power methods: fpwf, oracle, equal.
    #[arg(long, default_value = "fpwf")]
    pub power: String,
    #[arg(long, default_value_t = 100)]
    pub nmc: usize,
    #[arg(long, default_value_t = 10)]
    pub frames: u32,
    /// Total budget in dBm, or a sweep `start:step:stop`.
    #[arg(long)]
    pub pt_dbm: Option<String>,
    /// Trained parameter file, required by the dan selector.
    #[arg(long)]
    pub params: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, default_value_t = 500)]
    pub n_train: usize,
    #[arg(long, default_value_t = 5)]
    pub epochs: usize,
    #[arg(long, default_value_t = 5e-5)]
    pub lr: f64,
    #[arg(long, default_value_t = 10)]
    pub layers: usize,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ConvergeArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub params: Option<PathBuf>,
    /// Which configured target provides the instance.
    #[arg(long, default_value_t = 0)]
    pub target: usize,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct BenchArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub params: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    pub repeat: usize,
    /// Comma-separated node counts.
    #[arg(long, default_value = "16,32,64")]
    pub sizes: String,
    /// Target count for the power-allocation timing.
    #[arg(long, default_value_t = 6)]
    pub targets: usize,
}
