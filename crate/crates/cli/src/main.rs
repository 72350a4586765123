use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod config;
mod error;
mod io;
mod pipeline;

use error::CliError;

#[derive(Parser)]
#[command(name = "fresco", version, about = "Prior-regularized tiled diffusion sampling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the tile layout and coverage for a canvas.
    Plan(PlanArgs),
    /// Run the prior stage and the tiled stage, writing latent, trace and manifest.
    Sample(SampleArgs),
    /// Compute sharpness, temporal consistency, prior alignment and seam energy.
    Metrics(MetricsArgs),
    /// Sample over a grid of prior strengths and gates and tabulate the trade-off.
    Sweep(SweepArgs),
    /// Serve an FDP1 denoiser on stdin/stdout.
    #[command(hide = true)]
    Serve(ServeArgs),
}

#[derive(Args)]
pub struct PlanArgs {
    /// Canvas size, HxW.
    #[arg(long, value_parser = io::parse_dims)]
    canvas: (usize, usize),
    /// Window size, HxW.
    #[arg(long, value_parser = io::parse_dims)]
    window: (usize, usize),
    #[arg(long, default_value_t = 0.3)]
    overlap: f64,
    /// Pixels per latent cell.
    #[arg(long, default_value_t = 8)]
    factor: usize,
    /// Sizes are already in latent cells.
    #[arg(long)]
    latent: bool,
    /// One `row col height width` line per tile, nothing else.
    #[arg(long)]
    lines: bool,
}

#[derive(Args, Clone, Default)]
pub struct ConfigArgs {
    /// TOML run configuration.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override a config value, e.g. `--set prior.lambda_base=5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    workers: Option<usize>,
}

impl ConfigArgs {
    fn overrides(&self) -> Vec<String> {
        let mut v = self.set.clone();
        v.extend(self.seed.map(|s| format!("seed={s}")));
        v.extend(self.steps.map(|s| format!("sampler.steps={s}")));
        v.extend(self.workers.map(|w| format!("sampler.workers={w}")));
        v
    }
}

#[derive(Args)]
pub struct SampleArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Rerun from a previous run's manifest instead of a config file.
    #[arg(long, conflicts_with = "config")]
    manifest: Option<PathBuf>,
    /// Output directory.
    #[arg(long, short, default_value = "fresco-out")]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum Border {
    Replicate,
    Valid,
}

#[derive(Args)]
pub struct MetricsArgs {
    /// Videos: frame directories, multi-frame FLT1 tensors or single images.
    #[arg(required = true)]
    videos: Vec<PathBuf>,
    /// Prior video for each input, in the same order.
    #[arg(long)]
    prior: Vec<PathBuf>,
    #[arg(long, value_enum, default_value_t = Border::Replicate)]
    border: Border,
    /// Normalizer of the temporal distance.
    #[arg(long, default_value_t = fresco_core::metrics::TEMPORAL_DIVISOR)]
    divisor: f64,
    /// FDP1 embedding server command; the pooled-luminance embedder is used otherwise.
    #[arg(long, num_args = 1.., allow_hyphen_values = true)]
    embed_command: Vec<String>,
    /// Grid side of the pooled-luminance embedder.
    #[arg(long, default_value_t = 8)]
    embed_grid: usize,
    /// Latent window (HxW) of the tiling whose seams to measure.
    #[arg(long, value_parser = io::parse_dims)]
    seam_window: Option<(usize, usize)>,
    #[arg(long, default_value_t = 0.3)]
    seam_overlap: f64,
    /// Pixels per latent cell for the seam tiling.
    #[arg(long, default_value_t = 1)]
    factor: usize,
    /// Report path; stdout when omitted.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args)]
pub struct SweepArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Prior strengths, comma separated.
    #[arg(long, default_value = "0,0.5,1.5,5")]
    lambdas: String,
    /// Gates, comma separated.
    #[arg(long, default_value = "1")]
    taus: String,
    /// Report path; stdout when omitted.
    #[arg(long, short)]
    out: Option<PathBuf>,
    /// Also write each final latent here.
    #[arg(long)]
    save_dir: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum ServeKind {
    Echo,
    Gaussian,
    /// Responds with one extra column.
    WrongShape,
    /// Responds with bytes that are not a frame.
    Garbage,
    /// Never responds to denoise requests.
    Hang,
}

#[derive(Args)]
pub struct ServeArgs {
    #[arg(long, value_enum, default_value_t = ServeKind::Echo)]
    kind: ServeKind,
    #[arg(long, default_value_t = 0.0)]
    mu: f64,
    #[arg(long, default_value_t = 1.0)]
    s: f64,
    #[arg(long)]
    eps: bool,
    /// Grid side of the pooled embedder answering embed requests.
    #[arg(long, default_value_t = 8)]
    embed_grid: usize,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    let result: Result<(), CliError> = match cli.command {
        Command::Plan(a) => commands::plan::run(&a),
        Command::Sample(a) => commands::sample::run(&a),
        Command::Metrics(a) => commands::metrics::run(&a),
        Command::Sweep(a) => commands::sweep::run(&a),
        Command::Serve(a) => commands::serve::run(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("fresco: {e}");
            e.exit_code()
        }
    }
}
