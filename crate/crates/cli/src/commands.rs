use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use stereosim::io::{self, DatasetManifest, DeviceSpec, MANIFEST_FILE};
use stereosim::metrics::{depth_metrics, pose_accuracy, DepthMetricsReport, PoseSample};
use stereosim::scenegen::{render_sequence, simulate_sequence, SceneSpec, SequenceSpec};
use stereosim::{match_stereo, DepthMap, MatchConfig, StageTimings};

use crate::{Cli, Command, EvalArgs, MatchArgs, PoseEvalArgs, RenderArgs, SimulateArgs};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Lib(#[from] stereosim::Error),
    #[error("{0}")]
    Usage(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Lib(e) if e.is_io() => 2,
            _ => 1,
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

pub fn run(cli: Cli) -> Result<()> {
    match cli.threads {
        Some(0) => Err(CliError::Usage("--threads must be >= 1".into())),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| CliError::Usage(format!("cannot start thread pool: {e}")))?;
            pool.install(|| dispatch(cli.command))
        }
        None => dispatch(cli.command),
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Render(a) => render(a),
        Command::Match(a) => match_pair(a),
        Command::Simulate(a) => simulate(a),
        Command::Eval(a) => eval(a),
        Command::PoseEval(a) => pose_eval(a),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| stereosim::Error::io(dir, e).into())
}

fn load_device(path: &Path, seed: Option<u64>) -> Result<DeviceSpec> {
    let dev = io::parse_device(&io::read_text(path)?)?;
    Ok(match seed {
        Some(s) => dev.with_seed(s),
        None => dev,
    })
}

fn load_config(path: Option<&Path>) -> Result<MatchConfig> {
    Ok(match path {
        Some(p) => io::parse_match_config(&io::read_text(p)?)?,
        None => MatchConfig::default(),
    })
}

fn load_sequence(path: Option<&Path>, frames: Option<usize>) -> Result<SequenceSpec> {
    let mut seq = match path {
        Some(p) => io::parse_sequence(&io::read_text(p)?)?,
        None => SequenceSpec::still(1),
    };
    if let Some(t) = frames {
        seq.frame_count = t;
    }
    seq.validate()?;
    Ok(seq)
}

fn write_inputs(
    out: &Path,
    scene: &SceneSpec,
    seq: &SequenceSpec,
    manifest: &mut DatasetManifest,
) -> Result<()> {
    io::write_json(scene, &out.join(&manifest.scene))?;
    let name = "sequence.json".to_string();
    io::write_json(seq, &out.join(&name))?;
    manifest.sequence = Some(name);
    Ok(())
}

fn render(a: RenderArgs) -> Result<()> {
    let scene = io::parse_scene_spec(&io::read_text(&a.scene)?)?;
    let dev = load_device(&a.rig, a.seed)?;
    let seq = load_sequence(a.sequence.as_deref(), a.frames)?;
    let rig = dev.rig()?;
    let frames = render_sequence(&scene, &seq, &rig, &dev.frame_options(a.mode.into()))?;
    create_dir(&a.out)?;
    let mut manifest = DatasetManifest::new(dev);
    manifest.depth_png_scale = a.depth_scale;
    write_inputs(&a.out, &scene, &seq, &mut manifest)?;
    for f in &frames {
        manifest
            .frames
            .push(io::write_frame(&a.out, f, None, a.depth_scale)?);
    }
    io::write_manifest(&manifest, &a.out)?;
    println!(
        "rendered {} frame(s) into {}",
        frames.len(),
        a.out.display()
    );
    Ok(())
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let scene = io::parse_scene_spec(&io::read_text(&a.scene)?)?;
    let dev = load_device(&a.rig, a.seed)?;
    let seq = load_sequence(a.sequence.as_deref(), a.frames)?;
    let cfg = load_config(a.config.as_deref())?;
    let rig = dev.rig()?;
    let sims = simulate_sequence(&scene, &seq, &rig, &dev.frame_options(a.mode.into()), &cfg)?;
    create_dir(&a.out)?;
    let mut manifest = DatasetManifest::new(dev);
    manifest.depth_png_scale = a.depth_scale;
    write_inputs(&a.out, &scene, &seq, &mut manifest)?;
    let cfg_name = "match_config.json".to_string();
    io::write_json(&cfg, &a.out.join(&cfg_name))?;
    manifest.match_config = Some(cfg_name);
    for s in &sims {
        let entry = io::write_frame(
            &a.out,
            &s.frame,
            Some((&s.disparity, &s.depth)),
            a.depth_scale,
        )?;
        println!(
            "frame {}: mode {}, valid {:.1}%",
            s.frame.frame_index,
            s.frame.mode,
            100.0 * s.depth.valid_ratio()
        );
        manifest.frames.push(entry);
    }
    io::write_manifest(&manifest, &a.out)?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct MatchStats {
    width: usize,
    height: usize,
    d_max: usize,
    valid_ratio: f64,
    runtime_ms: f64,
    depth_png_scale: f64,
    timings: StageTimings,
}

fn match_pair(a: MatchArgs) -> Result<()> {
    let dev = load_device(&a.rig, None)?;
    let rig = dev.rig()?;
    let cfg = load_config(a.config.as_deref())?;
    let left = io::read_image_png(&a.left)?.to_gray();
    let right = io::read_image_png(&a.right)?.to_gray();
    let start = Instant::now();
    let m = match_stereo(&left, &right, &rig, &cfg)?;
    let runtime_ms = start.elapsed().as_secs_f64() * 1e3;
    let scale = a
        .depth_scale
        .unwrap_or_else(|| (cfg.depth.max_range_m / u16::MAX as f64).max(io::DEFAULT_DEPTH_SCALE));
    create_dir(&a.out)?;
    io::write_pfm(&m.disparity, &a.out.join("disparity.pfm"))?;
    io::write_pfm(&m.depth, &a.out.join("depth.pfm"))?;
    io::write_depth_png16(&m.depth, &a.out.join("depth.png"), scale)?;
    let stats = MatchStats {
        width: rig.width(),
        height: rig.height(),
        d_max: cfg.d_max,
        valid_ratio: m.depth.valid_ratio(),
        runtime_ms,
        depth_png_scale: scale,
        timings: m.timings,
    };
    io::write_json(&stats, &a.out.join("stats.json"))?;
    println!(
        "valid {:.1}% in {:.1} ms",
        100.0 * stats.valid_ratio,
        stats.runtime_ms
    );
    Ok(())
}

#[derive(Clone, Copy, PartialEq)]
enum Role {
    Pred,
    Gt,
}

fn read_depth(path: &Path, scale: f64) -> Result<DepthMap> {
    match path.extension().and_then(|e| e.to_str()) {
        Some(e) if e.eq_ignore_ascii_case("pfm") => Ok(io::read_pfm(path)?),
        Some(e) if e.eq_ignore_ascii_case("png") => Ok(io::read_depth_png16(path, scale)?),
        _ => Err(CliError::Usage(format!(
            "{}: expected a .pfm or .png depth file",
            path.display()
        ))),
    }
}

/// Depth files in `dir`, keyed for pairing: by frame index for dataset
/// directories, by file name otherwise.
fn depth_files(dir: &Path, role: Role) -> Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    if dir.join(MANIFEST_FILE).is_file() {
        let m = io::read_manifest(dir)?;
        for f in &m.frames {
            let file = match role {
                Role::Pred => f.sim_depth.as_ref().ok_or_else(|| {
                    CliError::Usage(format!(
                        "{}: frame {} has no simulated depth",
                        dir.display(),
                        f.frame_index
                    ))
                })?,
                Role::Gt => &f.gt_depth,
            };
            out.insert(format!("frame {:06}", f.frame_index), dir.join(file));
        }
        return Ok(out);
    }
    let entries = fs::read_dir(dir).map_err(|e| stereosim::Error::io(dir, e))?;
    for e in entries {
        let p = e.map_err(|e| stereosim::Error::io(dir, e))?.path();
        let ext = p
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase);
        if p.is_file() && matches!(ext.as_deref(), Some("pfm" | "png")) {
            let name = p
                .file_name()
                .unwrap_or_default()
                .to_string_lossy()
                .into_owned();
            out.insert(name, p);
        }
    }
    Ok(out)
}

fn eval(a: EvalArgs) -> Result<()> {
    let convention = a.delta_convention.into();
    let pairs: Vec<(PathBuf, PathBuf)> = match (&a.gt, a.pred.is_dir()) {
        (None, true) => {
            let pred = depth_files(&a.pred, Role::Pred)?;
            let gt = depth_files(&a.pred, Role::Gt)?;
            pred.into_iter()
                .filter_map(|(k, p)| gt.get(&k).map(|g| (p, g.clone())))
                .collect()
        }
        (None, false) => {
            return Err(CliError::Usage(
                "--gt is required unless --pred is a dataset directory".into(),
            ))
        }
        (Some(gt), true) => {
            if !gt.is_dir() {
                return Err(CliError::Usage(
                    "--pred and --gt must both be files or both directories".into(),
                ));
            }
            let pred = depth_files(&a.pred, Role::Pred)?;
            let gt = depth_files(gt, Role::Gt)?;
            pred.into_iter()
                .filter_map(|(k, p)| gt.get(&k).map(|g| (p, g.clone())))
                .collect()
        }
        (Some(gt), false) => vec![(a.pred.clone(), gt.clone())],
    };
    if pairs.is_empty() {
        return Err(CliError::Usage(
            "no matching prediction / ground-truth pairs".into(),
        ));
    }
    let mut reports = Vec::with_capacity(pairs.len());
    for (p, g) in &pairs {
        let pred = read_depth(p, a.depth_scale)?;
        let gt = read_depth(g, a.depth_scale)?;
        reports.push(depth_metrics(&pred, &gt, a.resize, convention)?);
    }
    let report: DepthMetricsReport = DepthMetricsReport::mean(&reports)?;
    io::write_json(&report, &a.out)?;
    print!("{}", io::to_json_pretty(&report));
    Ok(())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PoseFile {
    samples: Vec<PoseSample>,
}

fn pose_eval(a: PoseEvalArgs) -> Result<()> {
    let file: PoseFile = io::parse_json(&io::read_text(&a.samples)?)?;
    let acc = pose_accuracy(&file.samples, !a.add_only)?;
    io::write_json(&acc, &a.out)?;
    print!("{}", io::to_json_pretty(&acc));
    Ok(())
}
