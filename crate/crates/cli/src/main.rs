mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use roadinspect::model::Variant;

use crate::config::RunConfig;

#[derive(Parser, Debug)]
#[command(name = "roadinspect", version, about = "Road defect detection, lane following and simulated inspection flights")]
struct Cli {
    /// Run configuration file (key=value with [section] headers).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every random choice in the run.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Start from the full-size settings instead of the desk-scale ones.
    #[arg(long, global = true)]
    full_scale: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render a synthetic labelled dataset.
    GenData(GenDataArgs),
    /// Train a detector on a dataset directory.
    Train(TrainArgs),
    /// Score one or more trained detectors (or the oracle) on the validation split.
    Eval(EvalArgs),
    /// Fly the simulated two-node system over a scene and file defect reports.
    Simulate(SimulateArgs),
    /// Time forward pass plus decoding for both network variants or given weights.
    Bench(BenchArgs),
}

#[derive(Args, Debug)]
pub struct GenDataArgs {
    /// Number of images to render.
    #[arg(long)]
    pub count: Option<usize>,
    /// Image side in pixels (defaults to the network input size).
    #[arg(long)]
    pub size: Option<usize>,
    /// Render random poses over this scene instead of random scenes.
    #[arg(long)]
    pub scene: Option<PathBuf>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum VariantArg {
    Default,
    Improved,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Default => Variant::Default,
            VariantArg::Improved => Variant::Improved,
        }
    }
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Dataset directory written by gen-data (or any PPM + label directory).
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum)]
    pub variant: Option<VariantArg>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    /// Disable color augmentation.
    #[arg(long)]
    pub no_augment: bool,
    /// Continue from a checkpoint; its iteration is read from a `ckpt_NNNNNN` name
    /// unless --start-iteration is given.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long)]
    pub start_iteration: Option<usize>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Weights to score; repeat to compare models. The network layout is read from
    /// `network.cfg` beside each file.
    #[arg(long)]
    pub weights: Vec<PathBuf>,
    /// Score the ground truth itself as a perfect detector.
    #[arg(long)]
    pub oracle: bool,
    /// Score every sample instead of the validation split.
    #[arg(long)]
    pub all: bool,
    /// Count duplicate hits on one object as false positives.
    #[arg(long)]
    pub strict: bool,
    #[arg(long)]
    pub conf: Option<f64>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum DetectorArg {
    Oracle,
    Trained,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum SinkArg {
    File,
    Socket,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// Scene file; defaults to the built-in straight lane with five defects.
    #[arg(long)]
    pub scene: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = DetectorArg::Oracle)]
    pub detector: DetectorArg,
    /// Weights for --detector trained.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = SinkArg::File)]
    pub sink: SinkArg,
    /// Report server address for --sink socket.
    #[arg(long, default_value = "127.0.0.1:7878")]
    pub addr: String,
    #[arg(long)]
    pub max_ticks: Option<u64>,
    /// Lateral start offset from the lane, meters.
    #[arg(long, default_value_t = 1.0)]
    pub start_offset: f64,
    /// Pace the loop at wall-clock speed.
    #[arg(long)]
    pub realtime: bool,
    /// Keep the frame image behind every report.
    #[arg(long)]
    pub save_frames: bool,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    /// Weights to time; without any, freshly initialized default and improved networks are timed.
    #[arg(long)]
    pub weights: Vec<PathBuf>,
    #[arg(long, default_value_t = 100)]
    pub repetitions: usize,
    #[arg(long, default_value_t = 3)]
    pub warmup: usize,
    /// Input side in pixels (defaults to the configured input size).
    #[arg(long)]
    pub size: Option<usize>,
    /// Benchmark images; random noise images are used when absent.
    #[arg(long)]
    pub images: Option<PathBuf>,
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = if cli.full_scale { RunConfig::full_scale() } else { RunConfig::desk() };
    if let Some(path) = &cli.config {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let base = path.parent().unwrap_or(std::path::Path::new("."));
        cfg.apply_text(&text, base).with_context(|| format!("in {}", path.display()))?;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out = out.clone();
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli)?;
    match cli.command {
        Command::GenData(a) => commands::gen_data(cfg, a),
        Command::Train(a) => commands::train(cfg, a),
        Command::Eval(a) => commands::eval(cfg, a),
        Command::Simulate(a) => commands::simulate(cfg, a),
        Command::Bench(a) => commands::bench(cfg, a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
