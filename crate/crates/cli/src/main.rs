//! `ggds`: layout generation, scene initialization, optimization against a
//! denoising prior, rendering, composition, export and benchmarking.

mod commands;
mod prior;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "ggds", version, about = "Street scene generation with planar Gaussian splats")]
pub struct Cli {
    /// Seed for every random choice of the run.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Where to write the run manifest (each command has a default).
    #[arg(long, global = true, value_name = "PATH")]
    pub manifest: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Map JSON to a voxel layout and its surface mesh.
    Layout(LayoutArgs),
    /// Surface mesh to an initial splat scene.
    Init(InitArgs),
    /// Optimize a scene against a denoising prior.
    Optimize(OptimizeArgs),
    /// Render a scene along a trajectory to numbered frames.
    Render(RenderArgs),
    /// Place an asset's splats into a scene.
    Compose(ComposeArgs),
    /// Write one part of a scene as a standalone file (.ply, .obj or .pfm).
    Export(ExportArgs),
    /// Measure single-frame render throughput on a synthetic street scene.
    Bench(BenchArgs),
    /// Answer denoiser requests with a built-in prior (TCP or stdio).
    Serve(ServeArgs),
}

#[derive(Args, Debug)]
pub struct LayoutArgs {
    /// Map layout JSON with roads, buildings and extent.
    #[arg(long)]
    pub map: PathBuf,
    /// Output directory for voxels.lsdv, mesh.obj and the manifest.
    #[arg(long)]
    pub out: PathBuf,
    /// Voxel edge length in meters.
    #[arg(long, default_value_t = 0.5)]
    pub voxel: f64,
    /// Vertical extent above ground in meters.
    #[arg(long, default_value_t = 24.0)]
    pub height: f64,
    /// Horizontal chunk side in meters.
    #[arg(long, default_value_t = 100.0)]
    pub chunk: f64,
    /// Voxels shared between neighboring chunks.
    #[arg(long, default_value_t = 8)]
    pub overlap: u32,
    /// Chunk generator: `extrude` or `bridge:<endpoint>`.
    #[arg(long, default_value = "extrude")]
    pub generator: String,
    /// DDIM steps per chunk for a bridge generator.
    #[arg(long, default_value_t = 20)]
    pub sampler_steps: usize,
    /// Disable random facade jitter and vegetation in the extruder.
    #[arg(long)]
    pub no_jitter: bool,
    /// Occupancy level of the extracted surface.
    #[arg(long, default_value_t = ggds_core::layout::DEFAULT_ISO)]
    pub iso: f64,
    /// Bridge connect and reply timeout in seconds.
    #[arg(long, default_value_t = 60.0)]
    pub timeout: f64,
}

#[derive(Args, Debug)]
pub struct InitArgs {
    /// Surface mesh (OBJ), for example from `layout`.
    #[arg(long)]
    pub mesh: PathBuf,
    /// Output scene directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Environment map (PFM); a uniform sky is used otherwise.
    #[arg(long)]
    pub env: Option<PathBuf>,
    /// Uniform sky color as r,g,b.
    #[arg(long, default_value = "0.6,0.7,0.9")]
    pub sky: String,
    /// Initial splat opacity.
    #[arg(long, default_value_t = 0.7)]
    pub opacity: f32,
    /// Splat area as a multiple of its face area.
    #[arg(long, default_value_t = 1.0)]
    pub scale_factor: f32,
    /// Spherical-harmonic degree of splat color (0 to 3).
    #[arg(long, default_value_t = 0)]
    pub sh_degree: usize,
    /// Faces larger than this (m²) are subdivided before seeding.
    #[arg(long)]
    pub max_face_area: Option<f32>,
    /// Splat budget of the scene.
    #[arg(long, default_value_t = ggds_core::scene::DEFAULT_SPLAT_CAP)]
    pub cap: usize,
}

#[derive(Args, Debug)]
pub struct OptimizeArgs {
    /// Input scene directory.
    #[arg(long)]
    pub scene: PathBuf,
    /// Output scene directory (also receives loss.csv and checkpoints).
    #[arg(long)]
    pub out: PathBuf,
    /// `builtin:gaussian[:mean:variance]`, `builtin:delta:<image>` or
    /// `bridge:<endpoint>` with endpoint `host:port`, `stdio` or
    /// `stdio:<program> [args]`.
    #[arg(long)]
    pub prior: String,
    /// Config file of `key = value` lines; the shipped defaults otherwise.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one config key, `key=value`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Trajectory whose poses join the camera pool.
    #[arg(long)]
    pub trajectory: Option<PathBuf>,
    /// Jittered ground-level cameras added to the pool.
    #[arg(long, default_value_t = 16)]
    pub views: usize,
    /// Width of the jittered views.
    #[arg(long, default_value_t = 64)]
    pub width: usize,
    /// Height of the jittered views.
    #[arg(long, default_value_t = 64)]
    pub height: usize,
    /// Vertical field of view of the jittered views in degrees.
    #[arg(long, default_value_t = 60.0)]
    pub fov: f64,
    /// Text prompt forwarded to the denoiser.
    #[arg(long)]
    pub prompt: Option<String>,
    /// Save a checkpoint every this many steps; 0 disables checkpoints.
    #[arg(long, default_value_t = 0)]
    pub checkpoint_every: usize,
    /// Bridge connect and reply timeout in seconds.
    #[arg(long, default_value_t = 60.0)]
    pub timeout: f64,
    /// Suppress per-step progress lines.
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Args, Debug)]
pub struct RenderArgs {
    /// Scene directory.
    #[arg(long)]
    pub scene: PathBuf,
    /// Trajectory JSON.
    #[arg(long)]
    pub trajectory: PathBuf,
    /// Output directory for frame_NNNNN.png files.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write disparity as disparity_NNNNN.pfm.
    #[arg(long)]
    pub disparity: bool,
    /// Refine each frame by noising its latent slightly and denoising it.
    #[arg(long)]
    pub deferred: bool,
    /// Prior for deferred rendering (same forms as `optimize --prior`).
    #[arg(long)]
    pub prior: Option<String>,
    /// Config file supplying schedule and codec for deferred rendering.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Deferred noise level; the last level with cumulative signal >= 0.9 otherwise.
    #[arg(long)]
    pub defer_level: Option<usize>,
    /// DDIM steps of the deferred pass.
    #[arg(long, default_value_t = 5)]
    pub defer_steps: usize,
    /// Bridge connect and reply timeout in seconds.
    #[arg(long, default_value_t = 60.0)]
    pub timeout: f64,
}

#[derive(Args, Debug)]
pub struct ComposeArgs {
    /// Scene directory receiving the asset.
    #[arg(long)]
    pub scene: PathBuf,
    /// Asset as a scene directory or a splat PLY file.
    #[arg(long)]
    pub asset: PathBuf,
    /// Output scene directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Translation x,y,z in meters.
    #[arg(long, default_value = "0,0,0")]
    pub translate: String,
    /// Rotation about +z in degrees, applied before translation.
    #[arg(long, default_value_t = 0.0)]
    pub yaw: f32,
    /// Uniform scale, applied before translation.
    #[arg(long, default_value_t = 1.0)]
    pub scale: f32,
    /// Relight asset colors by the scene environment.
    #[arg(long)]
    pub relight: bool,
}

#[derive(Args, Debug)]
pub struct ExportArgs {
    /// Scene directory.
    #[arg(long)]
    pub scene: PathBuf,
    /// Output file: .ply (splats), .obj (proxy mesh) or .pfm (environment).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[arg(long, default_value_t = 100_000)]
    pub splats: usize,
    #[arg(long, default_value_t = 512)]
    pub width: usize,
    #[arg(long, default_value_t = 512)]
    pub height: usize,
    /// Timed frames after one warm-up frame.
    #[arg(long, default_value_t = 5)]
    pub frames: usize,
    /// Worker threads.
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
}

#[derive(Args, Debug)]
pub struct ServeArgs {
    /// `host:port` to listen on, or `stdio`.
    #[arg(long)]
    pub listen: String,
    /// `builtin:gaussian[:mean:variance]` or `builtin:delta:<image>`.
    #[arg(long, default_value = "builtin:gaussian")]
    pub prior: String,
    /// Exit after the first connection closes.
    #[arg(long)]
    pub once: bool,
}

fn config_help() -> String {
    format!(
        "Config file format, with the shipped defaults:\n\n{}",
        ggds_core::ggds::DEFAULT_CONFIG_TEXT
    )
}

fn parse_cli() -> Cli {
    let cmd = Cli::command().mut_subcommand("optimize", |c| c.after_long_help(config_help()));
    let matches = cmd.get_matches();
    Cli::from_arg_matches(&matches).unwrap_or_else(|e| e.exit())
}

fn main() -> ExitCode {
    let cli = parse_cli();
    let argv: Vec<String> = std::env::args().collect();
    match commands::dispatch(&cli, argv) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
