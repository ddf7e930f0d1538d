//! `flexrun`: simulate, train, sweep rod stiffness, compute gait metrics
//! and export reference gaits.
//!
//! Exit codes: 0 success, 1 invalid input or I/O failure, 2 the
//! simulation or training diverged (partial outputs are kept).

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "flexrun", version, about = "Hybrid rigid/flexible-rod running simulation and imitation training")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one episode and write its trajectory CSV.
    Simulate(SimArgs),
    /// Run one episode and print its metrics report.
    Evaluate(SimArgs),
    /// Train a policy with PPO.
    Train(TrainArgs),
    /// Repeat an episode for several rod stiffness scales and compare.
    Sweep(SweepArgs),
    /// Gait metrics of trajectory CSV files.
    Metrics(MetricsArgs),
    /// Write the tabulated reference gait as CSV.
    ExportReference(ExportArgs),
}

/// Model and environment selection shared by the commands.
#[derive(Args, Clone, Debug, Default)]
pub struct Setup {
    /// Bundled model (`humanoid`, `toy`) or model file.
    #[arg(long)]
    pub model: Option<String>,
    /// Training config whose model and `[env]` settings are used.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Reference gait: walk, run, sprint or swing.
    #[arg(long)]
    pub gait: Option<String>,
    /// Reference speed, m/s.
    #[arg(long)]
    pub speed: Option<f64>,
    /// Reference trajectory CSV replacing the built-in gait.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    /// Use the rigid variant of the model.
    #[arg(long)]
    pub rigid: bool,
    /// Scale of the rod stiffness.
    #[arg(long)]
    pub stiffness_scale: Option<f64>,
}

#[derive(Args, Clone, Debug)]
pub struct SimArgs {
    #[command(flatten)]
    pub setup: Setup,
    /// Policy checkpoint; without one the joints track the reference.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// s
    #[arg(long, default_value_t = 2.0)]
    pub duration: f64,
    /// Reference time at the start, s.
    #[arg(long, default_value_t = 0.0)]
    pub phase: f64,
    /// Sample actions from the policy instead of using its mean.
    #[arg(long)]
    pub stochastic: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Trajectory CSV (required for simulate, optional for evaluate).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Clone, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Start from a rigid-pretrained checkpoint.
    #[arg(long, conflicts_with = "resume")]
    pub fine_tune: Option<PathBuf>,
    /// Continue a run from its checkpoint.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub iterations: Option<u64>,
    /// Output directory for checkpoints and logs.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Clone, Debug)]
pub struct SweepArgs {
    #[command(flatten)]
    pub setup: Setup,
    /// Stiffness scales, e.g. `0.9,1.0,1.1`.
    #[arg(long, value_delimiter = ',', default_values_t = flexrun_core::sweep::DEFAULT_SCALES)]
    pub scales: Vec<f64>,
    /// Policy checkpoint: one shared by all scales, or one per scale.
    #[arg(long)]
    pub checkpoint: Vec<PathBuf>,
    /// Scale rod damping together with stiffness.
    #[arg(long)]
    pub scale_damping: bool,
    /// s
    #[arg(long, default_value_t = 2.0)]
    pub duration: f64,
    #[arg(long, default_value_t = 0.0)]
    pub phase: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Clone, Debug)]
pub struct MetricsArgs {
    #[arg(required = true)]
    pub files: Vec<PathBuf>,
    /// Body mass, kg (default: recorded in the file).
    #[arg(long)]
    pub mass: Option<f64>,
    #[arg(long, default_value_t = flexrun_core::metrics::DEFAULT_EFFICIENCY)]
    pub efficiency: f64,
    /// Also write the JSON report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Clone, Debug)]
pub struct ExportArgs {
    #[command(flatten)]
    pub setup: Setup,
    /// Sample rate, Hz.
    #[arg(long)]
    pub rate: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => commands::simulate(&a),
        Command::Evaluate(a) => commands::evaluate(&a),
        Command::Train(a) => commands::train(&a),
        Command::Sweep(a) => commands::sweep(&a),
        Command::Metrics(a) => commands::metrics(&a),
        Command::ExportReference(a) => commands::export_reference(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<commands::Diverged>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
