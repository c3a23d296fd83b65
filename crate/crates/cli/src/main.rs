//! `ontrac` command-line front end.

mod commands;
mod manifest;
mod repro;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "ontrac", version, about = "Online compression of map-matched trajectory streams")]
#[command(arg_required_else_help = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Default)]
pub enum Format {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic stream on a grid network.
    Synth(SynthArgs),
    /// Train the order-k spatial predictor.
    TrainSpatial(TrainSpatialArgs),
    /// Learn per-segment travel-time statistics.
    TrainTemporal(TrainTemporalArgs),
    /// Compress a stream.
    Compress(CompressArgs),
    /// Decompress a compressed file back into a stream with recovered times.
    Decompress(DecompressArgs),
    /// Infer per-segment travel times of every trajectory in a stream.
    Infer(InferArgs),
    /// Locate an object at a time in a store.
    Where(WhereArgs),
    /// Network entropy, and optionally the empirical block entropy of a model.
    Entropy(EntropyArgs),
    /// Throughput benchmarks.
    #[command(subcommand)]
    Bench(BenchCommand),
    /// Run the end-to-end pipeline and write the acceptance CSVs.
    Repro(ReproArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Walk,
    Sp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LayoutArg {
    Undirected,
    Bidirectional,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, value_enum, default_value = "sp")]
    pub mode: ModeArg,
    #[arg(long, default_value_t = 10)]
    pub rows: usize,
    #[arg(long, default_value_t = 10)]
    pub cols: usize,
    /// Generate on this network instead of a grid.
    #[arg(long, conflicts_with_all = ["rows", "cols", "layout", "segment_length"])]
    pub network: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "bidirectional")]
    pub layout: LayoutArg,
    #[arg(long, default_value_t = 100.0)]
    pub segment_length: f64,
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    /// Minimum seconds between kept timestamps; 0 keeps every timestamp.
    #[arg(long, default_value_t = 30.0)]
    pub gps_interval: f64,
    #[arg(long, default_value_t = 50)]
    pub walk_length: usize,
    #[arg(long, default_value_t = 15.0)]
    pub speed_mean: f64,
    #[arg(long, default_value_t = 10.0)]
    pub speed_std: f64,
    /// Draw a fixed mean per segment and traversal noise with this coefficient
    /// of variation instead of a fresh speed per traversal.
    #[arg(long)]
    pub segment_cv: Option<f64>,
    #[arg(long, default_value_t = 3600.0)]
    pub start_window: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Where to write the generated grid network.
    #[arg(long)]
    pub network_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainSpatialArgs {
    #[arg(long)]
    pub network: PathBuf,
    #[arg(long)]
    pub stream: PathBuf,
    #[arg(long, default_value_t = 2)]
    pub order: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainTemporalArgs {
    #[arg(long)]
    pub network: PathBuf,
    #[arg(long)]
    pub stream: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub iters: usize,
    #[arg(long, default_value_t = 5.0)]
    pub sigma_star: f64,
    /// Speed-smoothness std; estimated from the stream when omitted.
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long, env = "ONTRAC_WORKERS")]
    pub workers: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
    /// Write the training report here instead of stdout.
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    #[arg(long)]
    pub network: PathBuf,
    #[arg(long)]
    pub spatial_model: PathBuf,
    #[arg(long)]
    pub tt_model: PathBuf,
}

#[derive(Debug, Args)]
pub struct CompressArgs {
    #[command(flatten)]
    pub models: ModelArgs,
    #[arg(long)]
    pub stream: PathBuf,
    #[arg(long, default_value_t = 60.0)]
    pub lambda: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DecompressArgs {
    #[command(flatten)]
    pub models: ModelArgs,
    #[arg(long)]
    pub compressed: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub network: PathBuf,
    #[arg(long)]
    pub tt_model: PathBuf,
    #[arg(long)]
    pub stream: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    pub format: Format,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StrategyArg {
    Partial,
    FullReconstruct,
}

#[derive(Debug, Args)]
pub struct WhereArgs {
    #[arg(long)]
    pub store: PathBuf,
    #[arg(long, required_unless_present = "probes", requires = "time")]
    pub object: Option<String>,
    #[arg(long, requires = "object")]
    pub time: Option<f64>,
    /// File of `object,t` lines.
    #[arg(long, conflicts_with_all = ["object", "time"])]
    pub probes: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "partial")]
    pub strategy: StrategyArg,
    #[arg(long, value_enum, default_value = "csv")]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct EntropyArgs {
    #[arg(long)]
    pub network: PathBuf,
    #[arg(long, default_value_t = 0.85)]
    pub damping: f64,
    #[arg(long, default_value_t = 1e-10)]
    pub tol: f64,
    /// With `--stream`, also report the empirical block entropy of this model.
    #[arg(long, requires = "stream")]
    pub spatial_model: Option<PathBuf>,
    #[arg(long, requires = "spatial_model")]
    pub stream: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    pub format: Format,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StoreModeArg {
    Full,
    Compressed,
}

#[derive(Debug, Subcommand)]
pub enum BenchCommand {
    /// Ingest a stream into a fresh store and report inserts per second.
    Ingest(BenchIngestArgs),
    /// Run `where` probes against a store and report queries per second.
    Query(BenchQueryArgs),
}

#[derive(Debug, Args)]
pub struct BenchIngestArgs {
    /// Store directory; replaced if it exists.
    #[arg(long)]
    pub store: PathBuf,
    #[command(flatten)]
    pub models: ModelArgs,
    #[arg(long)]
    pub stream: PathBuf,
    #[arg(long, value_enum, default_value = "compressed")]
    pub mode: StoreModeArg,
    #[arg(long, default_value_t = 60.0)]
    pub lambda: f64,
    #[arg(long, default_value_t = 3)]
    pub runs: usize,
    #[arg(long, value_enum, default_value = "csv")]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct BenchQueryArgs {
    #[arg(long)]
    pub store: PathBuf,
    /// File of `object,t[,accepted positions separated by ;]` lines. A third
    /// field of `-` marks a probe that is expected to fail.
    #[arg(long)]
    pub probes: PathBuf,
    #[arg(long, value_enum, default_value = "partial")]
    pub strategy: StrategyArg,
    #[arg(long, default_value_t = 3)]
    pub runs: usize,
    #[arg(long, value_enum, default_value = "csv")]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct ReproArgs {
    /// Small sizes that finish in seconds.
    #[arg(long)]
    pub quick: bool,
    #[arg(long, default_value = "repro-out")]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long, env = "ONTRAC_WORKERS")]
    pub workers: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let argv: Vec<String> = std::env::args().skip(1).collect();
    match commands::run(cli.command, &argv) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e:#}", commands::error_tag(&e));
            ExitCode::from(1)
        }
    }
}
