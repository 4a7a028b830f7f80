//! `fringescan` command-line tool.
//!
//! Exit status is 0 on success, 1 on a runtime failure and 2 on a usage
//! error. Runtime failures print one line, `error[<category>]: <message>`.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fringescan::bench::BenchStage;
use fringescan::eval::IouMode;
use fringescan::patterns::Orientation;
use fringescan::pipeline::BackendKind;

#[derive(Debug, Parser)]
#[command(name = "fringescan", version, about = "Fringe-projection reconstruction, simulation and evaluation")]
pub struct Cli {
    /// Worker threads for parallel stages (default: all cores).
    #[arg(long, global = true, value_parser = clap::value_parser!(u64).range(1..))]
    threads: Option<u64>,

    /// Print the effective configuration and progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,

    /// TOML configuration file; command-line flags take precedence.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render a pattern stack of a synthetic scene.
    Simulate(SimulateArgs),
    /// Render an orientation sweep of a scene with material masks and depth.
    Datagen(DatagenArgs),
    /// Decode a stack into absolute phase.
    Decode(DecodeArgs),
    /// Decode and triangulate a stack into a point cloud.
    Reconstruct(ReconstructArgs),
    /// Gated reconstruction with depth completion.
    #[command(subcommand)]
    Pipeline(PipelineCommand),
    /// Depth and detection metrics.
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Time one processing stage.
    Bench(BenchArgs),
    /// Projector pattern utilities.
    #[command(subcommand)]
    Patterns(PatternsCommand),
    /// Serve the external completion protocol with a guidance-based stub.
    CompletionStub(StubArgs),
}

#[derive(Debug, Args)]
struct RigArgs {
    /// Calibration JSON. Without it, the synthetic rig is used.
    #[arg(long, value_name = "FILE")]
    calib: Option<PathBuf>,

    /// Camera resolution of the synthetic rig.
    #[arg(long, value_name = "WxH", value_parser = parse_size, conflicts_with = "calib")]
    camera_size: Option<(usize, usize)>,

    /// Camera focal length of the synthetic rig, pixels.
    #[arg(long, conflicts_with = "calib")]
    camera_focal: Option<f64>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// plane, ramp, sphere, hdd[:N] or a scene JSON file.
    #[arg(long)]
    scene: String,

    #[arg(long, value_name = "DIR")]
    out: PathBuf,

    #[command(flatten)]
    rig: RigArgs,

    /// Noise seed.
    #[arg(long)]
    seed: Option<u64>,

    /// Noise standard deviation, fraction of full scale.
    #[arg(long)]
    noise: Option<f64>,

    /// Phase-shift count.
    #[arg(long, default_value_t = 18, value_parser = clap::value_parser!(u64).range(3..))]
    shifts: u64,

    /// Gray-code bit count.
    #[arg(long, default_value_t = 6, value_parser = clap::value_parser!(u32).range(1..=31))]
    gray_bits: u32,

    /// PNG bit depth, 8 or 16.
    #[arg(long, default_value_t = 16, value_parser = parse_bit_depth)]
    bit_depth: u32,

    /// Overwrite a non-empty output directory.
    #[arg(long)]
    force: bool,
}

#[derive(Debug, Args)]
struct DatagenArgs {
    #[arg(long)]
    scene: String,

    #[arg(long, value_name = "DIR")]
    out: PathBuf,

    #[command(flatten)]
    rig: RigArgs,

    /// Largest rotation angle, degrees.
    #[arg(long, default_value_t = 0.0)]
    theta_max: f64,

    /// Rotation step, degrees.
    #[arg(long, default_value_t = 1.0)]
    delta_theta: f64,

    /// Seed for material randomization and noise.
    #[arg(long, default_value_t = 0)]
    seed: u64,

    #[arg(long)]
    force: bool,
}

#[derive(Debug, Args)]
struct DecodeArgs {
    /// Stack directory with a manifest.
    #[arg(long, value_name = "DIR")]
    stack: PathBuf,

    /// Absolute phase as raw f32, NaN where invalid, with a JSON sidecar.
    #[arg(long, value_name = "FILE")]
    out: PathBuf,

    /// Reliable-pixel mask as PNG.
    #[arg(long, value_name = "FILE")]
    reliability_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ReconstructArgs {
    #[arg(long, value_name = "DIR")]
    stack: PathBuf,

    /// Calibration JSON (default: calibration.json in the stack directory).
    #[arg(long, value_name = "FILE")]
    calib: Option<PathBuf>,

    /// Point cloud in binary PLY.
    #[arg(long, value_name = "FILE")]
    out: PathBuf,

    /// Depth map as raw f32 with a JSON sidecar.
    #[arg(long, value_name = "FILE")]
    depth_out: Option<PathBuf>,

    /// Label file whose classes are attached to the points.
    #[arg(long, value_name = "FILE")]
    labels: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum PipelineCommand {
    /// Reconstruct one stack, completing depth if the drive is platter-facing.
    Run(PipelineRunArgs),
}

#[derive(Debug, Args)]
struct PipelineRunArgs {
    #[arg(long, value_name = "DIR")]
    stack: PathBuf,

    /// Instance labels for the stack (default: labels.txt in the stack directory).
    #[arg(long, value_name = "FILE")]
    labels: Option<PathBuf>,

    #[arg(long, value_name = "FILE")]
    calib: Option<PathBuf>,

    #[arg(long, value_parser = parse_from_str::<BackendKind>)]
    backend: Option<BackendKind>,

    /// Completion service: tcp://host:port, unix:PATH or exec:COMMAND.
    #[arg(long)]
    endpoint: Option<String>,

    #[arg(long, value_name = "MS")]
    timeout_ms: Option<u64>,

    /// Minimum confidence of a platter detection.
    #[arg(long)]
    min_confidence: Option<f64>,

    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,

    #[arg(long, value_name = "FILE")]
    depth_out: Option<PathBuf>,

    /// Diagnostics JSON (default: printed to stdout).
    #[arg(long, value_name = "FILE")]
    diagnostics: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum EvalCommand {
    /// RMSE and MAE of a depth map against ground truth.
    Depth(EvalDepthArgs),
    /// Box or mask average precision of predicted instances.
    Detect(EvalDetectArgs),
}

#[derive(Debug, Args)]
struct EvalDepthArgs {
    /// Predicted depth (raw f32 with JSON sidecar), NaN where missing.
    #[arg(long, value_name = "FILE")]
    pred: PathBuf,

    #[arg(long, value_name = "FILE")]
    gt: PathBuf,

    /// Restrict to the pixels set in this mask PNG.
    #[arg(long, value_name = "FILE")]
    region: Option<PathBuf>,

    /// Method name shown in the report.
    #[arg(long, default_value = "prediction")]
    method: String,

    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalDetectArgs {
    /// Prediction label file, or a directory of them.
    #[arg(long, value_name = "PATH")]
    pred: PathBuf,

    /// Ground-truth label file, or a directory matched to --pred by file name.
    #[arg(long, value_name = "PATH")]
    gt: PathBuf,

    #[arg(long, default_value = "box", value_parser = parse_from_str::<IouMode>)]
    mode: IouMode,

    /// Image size the labels refer to, used for mask IoU.
    #[arg(long, value_name = "WxH", default_value = "512x512", value_parser = parse_size)]
    image_size: (usize, usize),

    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct BenchArgs {
    /// Stage to time.
    #[arg(long, value_parser = parse_from_str::<BenchStage>)]
    stage: BenchStage,

    #[arg(long)]
    warmup: Option<usize>,

    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    iters: Option<u64>,

    /// Stack to time instead of the synthetic fixture.
    #[arg(long, value_name = "DIR")]
    stack: Option<PathBuf>,

    #[arg(long, value_name = "FILE", requires = "stack")]
    labels: Option<PathBuf>,

    #[arg(long, value_name = "FILE", requires = "stack")]
    calib: Option<PathBuf>,

    /// Noise seed of the synthetic fixture.
    #[arg(long, default_value_t = 0, conflicts_with = "stack")]
    seed: u64,

    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum PatternsCommand {
    /// Write the projector pattern sequence as 8-bit PNGs.
    Export(PatternsExportArgs),
}

#[derive(Debug, Args)]
struct PatternsExportArgs {
    #[arg(long, value_name = "DIR")]
    out: PathBuf,

    #[arg(long, default_value_t = 912)]
    width: usize,

    #[arg(long, default_value_t = 1140)]
    height: usize,

    /// Fringe period, projector pixels.
    #[arg(long, default_value_t = 18.0)]
    period: f64,

    #[arg(long, default_value_t = 18)]
    shifts: usize,

    #[arg(long, default_value_t = 6)]
    gray_bits: u32,

    #[arg(long, default_value = "vertical", value_parser = parse_orientation)]
    orientation: Orientation,

    /// Emulate binary defocus with this blur radius, pixels.
    #[arg(long)]
    defocus: Option<f64>,
}

#[derive(Debug, Args)]
struct StubArgs {
    /// tcp://host:port or unix:PATH.
    #[arg(long, required_unless_present = "stdio", conflicts_with = "stdio")]
    listen: Option<String>,

    /// Serve a single session on stdin/stdout.
    #[arg(long)]
    stdio: bool,

    /// Dense depth = offset + scale · guidance.
    #[arg(long, default_value_t = 0.0)]
    scale: f32,

    #[arg(long, default_value_t = 500.0)]
    offset: f32,

    #[arg(long, default_value_t = 1)]
    max_in_flight: u32,

    /// Exit after the first connection closes.
    #[arg(long)]
    once: bool,
}

fn parse_size(s: &str) -> Result<(usize, usize), String> {
    let (w, h) = s.split_once(['x', 'X']).ok_or_else(|| format!("expected WxH, got {s:?}"))?;
    let w: usize = w.parse().map_err(|_| format!("invalid width {w:?}"))?;
    let h: usize = h.parse().map_err(|_| format!("invalid height {h:?}"))?;
    if w == 0 || h == 0 {
        return Err("size must be positive".into());
    }
    Ok((w, h))
}

fn parse_bit_depth(s: &str) -> Result<u32, String> {
    match s {
        "8" => Ok(8),
        "16" => Ok(16),
        _ => Err(format!("expected 8 or 16, got {s:?}")),
    }
}

fn parse_from_str<T: std::str::FromStr<Err = fringescan::Error>>(s: &str) -> Result<T, String> {
    s.parse().map_err(|e: fringescan::Error| e.to_string())
}

fn parse_orientation(s: &str) -> Result<Orientation, String> {
    match s {
        "vertical" => Ok(Orientation::Vertical),
        "horizontal" => Ok(Orientation::Horizontal),
        _ => Err(format!("expected vertical or horizontal, got {s:?}")),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .filter_level(if cli.verbose {
            log::LevelFilter::Info
        } else {
            log::LevelFilter::Warn
        })
        .format_target(false)
        .format_timestamp(None)
        .init();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {}", e.category(), e.to_string().replace('\n', " "));
            ExitCode::from(1)
        }
    }
}
