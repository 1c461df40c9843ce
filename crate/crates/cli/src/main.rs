//! `stereosim` command-line front end.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use stereosim::metrics::DeltaConvention;
use stereosim::scenegen::ModeSelect;

#[derive(Debug, Parser)]
#[command(
    name = "stereosim",
    version,
    about = "Active-stereo depth sensor simulator"
)]
struct Cli {
    /// Worker threads for data-parallel stages (default: all cores).
    #[arg(long, global = true, env = "RASIM_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render stereo images and ground-truth depth for a scene.
    Render(RenderArgs),
    /// Run the matcher on a rectified image pair.
    Match(MatchArgs),
    /// Render a sequence and run the matcher on every frame.
    Simulate(SimulateArgs),
    /// Compare predicted depth against ground truth.
    Eval(EvalArgs),
    /// Score 6DoF pose estimates with ADD / ADD-S.
    PoseEval(PoseEvalArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Auto,
    Ir,
    Rgb,
}

impl From<ModeArg> for ModeSelect {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Auto => ModeSelect::Auto,
            ModeArg::Ir => ModeSelect::Ir,
            ModeArg::Rgb => ModeSelect::Rgb,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum DeltaArg {
    Strict,
    Inclusive,
}

impl From<DeltaArg> for DeltaConvention {
    fn from(d: DeltaArg) -> Self {
        match d {
            DeltaArg::Strict => DeltaConvention::Strict,
            DeltaArg::Inclusive => DeltaConvention::Inclusive,
        }
    }
}

#[derive(Debug, Args)]
struct RenderArgs {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    rig: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Keyframed camera/object motion; without it the scene is static.
    #[arg(long)]
    sequence: Option<PathBuf>,
    /// Number of frames (overrides the sequence's frame count).
    #[arg(long)]
    frames: Option<usize>,
    /// Overrides the projector and sensor-noise seeds.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum, default_value = "auto")]
    mode: ModeArg,
    /// Meters per unit in 16-bit depth PNGs.
    #[arg(long, default_value_t = stereosim::io::DEFAULT_DEPTH_SCALE)]
    depth_scale: f64,
}

#[derive(Debug, Args)]
struct MatchArgs {
    #[arg(long)]
    left: PathBuf,
    #[arg(long)]
    right: PathBuf,
    #[arg(long)]
    rig: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Meters per unit in the 16-bit depth PNG (default: fits the
    /// configured maximum range).
    #[arg(long)]
    depth_scale: Option<f64>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    sequence: Option<PathBuf>,
    #[arg(long)]
    rig: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Number of frames when no sequence file is given.
    #[arg(long)]
    frames: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum, default_value = "auto")]
    mode: ModeArg,
    #[arg(long, default_value_t = stereosim::io::DEFAULT_DEPTH_SCALE)]
    depth_scale: f64,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Depth file (.pfm or .png) or directory; a dataset directory
    /// contributes its simulated depth.
    #[arg(long)]
    pred: PathBuf,
    /// Ground-truth file or directory; defaults to the ground truth of the
    /// dataset given as --pred.
    #[arg(long)]
    gt: Option<PathBuf>,
    /// Nearest-neighbour resize before comparison, as HEIGHTxWIDTH.
    #[arg(long, value_parser = parse_size)]
    resize: Option<(usize, usize)>,
    #[arg(long, value_enum, default_value = "strict")]
    delta_convention: DeltaArg,
    /// Meters per unit when reading 16-bit depth PNGs.
    #[arg(long, default_value_t = stereosim::io::DEFAULT_DEPTH_SCALE)]
    depth_scale: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct PoseEvalArgs {
    #[arg(long)]
    samples: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Score symmetric objects with ADD instead of ADD-S.
    #[arg(long)]
    add_only: bool,
}

fn parse_size(s: &str) -> Result<(usize, usize), String> {
    let (h, w) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected HEIGHTxWIDTH, got {s:?}"))?;
    let p = |v: &str| {
        v.trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| format!("bad dimension {v:?}"))
    };
    Ok((p(h)?, p(w)?))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
