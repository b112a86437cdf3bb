use std::net::SocketAddr;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use cloudburst_core::evaluation::pipeline::Mode;

/// Environment variable holding the default output directory.
pub const OUT_ENV: &str = "CLOUDBURST_OUT";

#[derive(Debug, Parser)]
#[command(name = "cloudburst", version, about = "Cloudburst early-warning simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate one event and write its artifacts.
    Run(RunArgs),
    /// Compare MAS against the baseline over a seeded batch.
    Bench(BatchArgs),
    /// Disable one component (or all, one at a time) and report the deltas.
    Ablate(AblateArgs),
    /// Run one event live behind the HTTP gateway.
    Serve(ServeArgs),
    /// Serve a finished run directory read-only.
    Replay(ReplayArgs),
    /// Print the Markdown report stored in a run or batch directory.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// JSON pipeline configuration; defaults apply to omitted fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, env = OUT_ENV, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// mas, baseline or ablation:<initiation|downscaling|learning>.
    #[arg(long, default_value = "mas")]
    pub mode: Mode,
}

#[derive(Debug, Clone, Args)]
pub struct BatchArgs {
    #[command(flatten)]
    pub common: Common,
    /// Number of events in the batch.
    #[arg(long, default_value_t = 48)]
    pub events: usize,
    /// First seed of the batch.
    #[arg(long = "seed-base", visible_alias = "seed", default_value_t = 1)]
    pub seed_base: u64,
}

#[derive(Debug, Clone, Args)]
pub struct AblateArgs {
    /// initiation, downscaling, learning or all.
    #[arg(default_value = "all")]
    pub component: String,
    #[command(flatten)]
    pub batch: BatchArgs,
}

#[derive(Debug, Clone, Args)]
pub struct ServeArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: SocketAddr,
    /// Simulated minutes per wall-clock second; 0 runs unpaced.
    #[arg(long, default_value_t = 0.0)]
    pub pace: f64,
}

#[derive(Debug, Clone, Args)]
pub struct ReplayArgs {
    /// Directory written by `run` or `serve`.
    pub dir: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: SocketAddr,
    /// Simulated minutes per wall-clock second; 0 streams at once.
    #[arg(long, default_value_t = 0.0)]
    pub pace: f64,
}

#[derive(Debug, Clone, Args)]
pub struct ReportArgs {
    pub dir: PathBuf,
}
