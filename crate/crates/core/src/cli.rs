//! `splatloc` command line.
//!
//! Exit codes: 0 success, 2 input error, 3 assertion failure, 4 numeric
//! failure.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{error, info, warn};

use crate::config::RunConfig;
use crate::dataio::{
    load_replica_sequence, load_tum_sequence, optional_intrinsics, read_intrinsics, synth_scene,
    write_synth_dataset, write_trajectory_tum, Sequence, TrajectoryEntry,
};
use crate::error::{Error, Result};
use crate::eval::{self, Alignment, MetricReport};
use crate::geom::{CameraIntrinsics, Pose, Quaternion};
use crate::grad::{run_gradcheck, GradCheckConfig};
use crate::pose_opt::{localize_sequence, InitMode, PoseEstimate, SequenceInit};
use crate::renderer::{render, write_csv, write_png16, Precision};
use crate::scene_init::{build_scene, load_scene, save_scene, summarize_scene, write_scene_summary};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_ASSERT: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "splatloc", version, about = "Depth-only camera localization in a Gaussian splatting map")]
pub struct Cli {
    /// TOML run configuration. Flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Worker threads (0 = one per core).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Seed for every random choice, including the synthetic generator.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Compositing precision.
    #[arg(long, global = true, value_enum)]
    pub precision: Option<PrecisionArg>,
    /// Order-independent (bit-reproducible) gradient reductions.
    #[arg(long, global = true)]
    pub deterministic: Option<bool>,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PrecisionArg {
    F64,
    F32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DatasetFormat {
    /// TUM RGB-D layout (depth.txt, groundtruth.txt).
    Tum,
    /// Replica layout (traj.txt, results/depth*.png).
    Replica,
    /// Output of `splatloc synth` (TUM layout with intrinsics.json).
    Synth,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InitArg {
    /// Previous frame's ground truth.
    Gt,
    /// The frame's own ground truth (combine with --perturb-*).
    Current,
    /// Previous frame's estimate.
    Prev,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a Gaussian scene from posed depth frames.
    BuildScene(BuildSceneArgs),
    /// Estimate a pose for every depth frame of a sequence.
    Localize(LocalizeArgs),
    /// Score an estimated trajectory against ground truth.
    Evaluate(EvaluateArgs),
    /// Compare analytic pose gradients with finite differences.
    Gradcheck(GradcheckArgs),
    /// Render depth from a scene at one pose.
    Render(RenderArgs),
    /// Generate a synthetic room dataset.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct BuildSceneArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, value_enum, default_value = "tum")]
    pub format: DatasetFormat,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub frame_stride: Option<usize>,
}

#[derive(Debug, Args)]
pub struct LocalizeArgs {
    #[arg(long)]
    pub scene: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, value_enum, default_value = "tum")]
    pub format: DatasetFormat,
    #[arg(long, value_enum, default_value = "gt")]
    pub init: InitArg,
    /// Output trajectory (TUM format, camera-to-world). Per-frame results go
    /// to the same path with a `.jsonl` extension.
    #[arg(long)]
    pub out: PathBuf,
    /// Per-iteration loss CSV.
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Upper bound of the random initial rotation offset, degrees.
    #[arg(long)]
    pub perturb_rot_deg: Option<f64>,
    /// Upper bound of the random initial camera-center offset, meters.
    #[arg(long)]
    pub perturb_trans_m: Option<f64>,
    /// Only the first N frames.
    #[arg(long)]
    pub max_frames: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub est: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    /// Exit with code 3 if ATE RMSE (cm) exceeds this.
    #[arg(long)]
    pub assert_max_ate: Option<f64>,
    /// Exit with code 3 if AAE RMSE (degrees) exceeds this.
    #[arg(long)]
    pub assert_max_aae: Option<f64>,
    /// Rigidly align the estimate to ground truth first.
    #[arg(long)]
    pub align: bool,
    /// Maximum timestamp difference for matching, seconds.
    #[arg(long, default_value_t = 0.02)]
    pub max_dt: f64,
    /// Write `<REPORT>.csv` and `<REPORT>.json`.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Sequence name in the table.
    #[arg(long, default_value = "sequence")]
    pub name: String,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 50)]
    pub trials: usize,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    #[arg(long)]
    pub scene: PathBuf,
    /// Camera-to-world pose `tx ty tz qx qy qz qw`.
    #[arg(long, allow_hyphen_values = true, conflicts_with = "frame")]
    pub pose: Option<String>,
    /// Dataset supplying intrinsics and, with --frame, the pose.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "synth")]
    pub format: DatasetFormat,
    /// Ground-truth pose of this dataset frame.
    #[arg(long, requires = "dataset")]
    pub frame: Option<usize>,
    /// Intrinsics JSON (otherwise dataset, config, then synth defaults).
    #[arg(long)]
    pub intrinsics: Option<PathBuf>,
    /// 16-bit PNG of normalized depth.
    #[arg(long)]
    pub out: PathBuf,
    /// Optional CSV of normalized depth.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// TOML synth spec (otherwise the `[synth]` config table).
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn exit_code(e: &Error) -> i32 {
    if e.is_input_error() {
        EXIT_INPUT
    } else {
        EXIT_NUMERIC
    }
}

/// Loads the config file and applies flag overrides.
pub fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(t) = cli.threads {
        cfg.threads = t;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
        cfg.synth.seed = s;
    }
    if let Some(p) = cli.precision {
        cfg.render.precision = match p {
            PrecisionArg::F64 => Precision::F64,
            PrecisionArg::F32 => Precision::F32,
        };
    }
    if let Some(d) = cli.deterministic {
        cfg.render.deterministic = d;
    }
    match &cli.command {
        Command::BuildScene(a) => {
            if let Some(s) = a.frame_stride {
                cfg.scene.frame_stride = s;
            }
        }
        Command::Localize(a) => {
            if let Some(r) = a.perturb_rot_deg {
                cfg.perturb.max_rot_deg = r;
            }
            if let Some(t) = a.perturb_trans_m {
                cfg.perturb.max_trans_m = t;
            }
        }
        Command::Synth(a) => {
            if let Some(p) = &a.spec {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                cfg.synth = toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
                if let Some(s) = cli.seed {
                    cfg.synth.seed = s;
                }
            }
        }
        _ => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main() -> i32 {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    run(&cli)
}

pub fn run(cli: &Cli) -> i32 {
    let cfg = match resolve_config(cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return exit_code(&e);
        }
    };
    if cfg.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cfg.threads).build_global() {
            warn!("thread pool already configured: {e}");
        }
    }
    print!("{}", cfg.header());
    let result = match &cli.command {
        Command::BuildScene(a) => cmd_build_scene(a, &cfg),
        Command::Localize(a) => cmd_localize(a, &cfg),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Gradcheck(a) => cmd_gradcheck(a, &cfg),
        Command::Render(a) => cmd_render(a, &cfg),
        Command::Synth(a) => cmd_synth(a, &cfg),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

/// Intrinsics commonly used for sequences that ship without them.
pub fn default_intrinsics(format: DatasetFormat) -> Option<CameraIntrinsics> {
    match format {
        DatasetFormat::Tum => Some(CameraIntrinsics::new(525.0, 525.0, 319.5, 239.5, 640, 480)),
        DatasetFormat::Replica => Some(CameraIntrinsics::new(600.0, 600.0, 599.5, 339.5, 1200, 680)),
        DatasetFormat::Synth => None,
    }
}

fn load_sequence(dir: &Path, format: DatasetFormat, cfg: &RunConfig) -> Result<Sequence> {
    let d = &cfg.dataset;
    match format {
        DatasetFormat::Tum | DatasetFormat::Synth => load_tum_sequence(dir, d.tum_depth_factor, d.assoc_max_dt),
        DatasetFormat::Replica => load_replica_sequence(dir, d.replica_depth_factor),
    }
}

fn resolve_intrinsics(seq_k: Option<CameraIntrinsics>, format: DatasetFormat, cfg: &RunConfig) -> Result<CameraIntrinsics> {
    let k = cfg
        .camera
        .or(seq_k)
        .or_else(|| default_intrinsics(format))
        .ok_or_else(|| Error::InvalidArgument("no intrinsics: add intrinsics.json or a [camera] table".into()))?;
    k.validate()?;
    Ok(k)
}

fn cmd_build_scene(a: &BuildSceneArgs, cfg: &RunConfig) -> Result<i32> {
    let seq = load_sequence(&a.dataset, a.format, cfg)?;
    let k = resolve_intrinsics(seq.intrinsics, a.format, cfg)?;
    let frames: Vec<_> = seq
        .frames
        .into_iter()
        .map(|f| {
            f.gt.map(|p| (f.depth, p))
                .ok_or_else(|| Error::InvalidArgument(format!("frame at {} has no pose", f.timestamp)))
        })
        .collect::<Result<_>>()?;
    let (scene, report) = build_scene(&frames, &k, &cfg.scene)?;
    save_scene(&a.out, &scene)?;
    write_scene_summary(&a.out.with_extension("json"), &scene)?;
    let s = summarize_scene(&scene);
    println!("frames ingested: {} of {}", report.frames_used, frames.len());
    println!("points: {} raw, {} after filtering", report.raw_points, report.after_downsample);
    println!("gaussians: {}", s.gaussians);
    println!("bounds: {:?} .. {:?}", s.bounds_min, s.bounds_max);
    println!(
        "sigma: min {:.6} median {:.6} mean {:.6} max {:.6} ({} clamped)",
        s.sigma_min, s.sigma_median, s.sigma_mean, s.sigma_max, report.clamped_scales
    );
    Ok(EXIT_OK)
}

/// One row per iteration per successfully localized frame.
pub fn format_loss_log(timestamps: &[f64], results: &[Result<PoseEstimate>]) -> String {
    let mut s = String::from("frame,timestamp,iteration,total,depth,contour,reg,valid_pixels\n");
    for (i, (ts, r)) in timestamps.iter().zip(results).enumerate() {
        if let Ok(est) = r {
            for (it, t) in est.term_history.iter().enumerate() {
                writeln!(
                    s,
                    "{i},{ts:.6},{it},{:e},{:e},{:e},{:e},{}",
                    t.total, t.depth, t.contour, t.reg, t.valid_pixels
                )
                .expect("write to string");
            }
        }
    }
    s
}

/// One JSON object per frame: iterations, best losses and pose, or the
/// error that stopped the frame.
pub fn format_frame_log(timestamps: &[f64], results: &[Result<PoseEstimate>]) -> String {
    let mut s = String::new();
    for (i, (ts, r)) in timestamps.iter().zip(results).enumerate() {
        let v = match r {
            Ok(e) => serde_json::json!({
                "frame": i,
                "timestamp": ts,
                "iterations": e.iterations_run,
                "best_iteration": e.best_iteration,
                "converged": e.converged,
                "loss": {
                    "total": e.final_loss.total,
                    "depth": e.final_loss.depth,
                    "contour": e.final_loss.contour,
                    "reg": e.final_loss.reg,
                    "valid_pixels": e.final_loss.valid_pixels,
                },
                "pose": { "q": e.pose.rotation.to_array(), "t": e.pose.translation.as_slice() },
            }),
            Err(e) => serde_json::json!({ "frame": i, "timestamp": ts, "error": e.to_string() }),
        };
        s += &v.to_string();
        s.push('\n');
    }
    s
}

fn cmd_localize(a: &LocalizeArgs, cfg: &RunConfig) -> Result<i32> {
    let scene = load_scene(&a.scene)?;
    let mut seq = load_sequence(&a.dataset, a.format, cfg)?;
    if let Some(n) = a.max_frames {
        seq.frames.truncate(n);
    }
    let k = resolve_intrinsics(seq.intrinsics, a.format, cfg)?;
    let gt = seq.gt_poses();
    let mode = match a.init {
        InitArg::Gt => InitMode::Gt,
        InitArg::Current => InitMode::Current,
        InitArg::Prev => InitMode::Prev,
    };
    let init = SequenceInit {
        perturb: cfg.perturb,
        seed: cfg.seed,
        ..SequenceInit::new(mode, gt.as_deref())
    };
    let depths: Vec<_> = seq.frames.iter().map(|f| f.depth.clone()).collect();
    let results = localize_sequence(&scene, &k, &depths, &init, &cfg.optim, &cfg.loss, &cfg.render)?;

    let mut est = Vec::new();
    let mut matched_gt = Vec::new();
    let mut first_err = None;
    for (f, r) in seq.frames.iter().zip(&results) {
        match r {
            Ok(e) => {
                info!(
                    "t={:.6}: {} iterations, best loss {:.4e} at {}",
                    f.timestamp, e.iterations_run, e.final_loss.total, e.best_iteration
                );
                est.push(TrajectoryEntry {
                    timestamp: f.timestamp,
                    pose: e.pose,
                });
                if let Some(g) = f.gt {
                    matched_gt.push(TrajectoryEntry {
                        timestamp: f.timestamp,
                        pose: g,
                    });
                }
            }
            Err(e) => {
                error!("t={:.6}: {e}", f.timestamp);
                first_err.get_or_insert(e);
            }
        }
    }
    let ts: Vec<f64> = seq.frames.iter().map(|f| f.timestamp).collect();
    if let Some(path) = &a.log {
        std::fs::write(path, format_loss_log(&ts, &results)).map_err(|e| Error::io(path, e))?;
    }
    let frame_log = a.out.with_extension("jsonl");
    std::fs::write(&frame_log, format_frame_log(&ts, &results)).map_err(|e| Error::io(&frame_log, e))?;
    if est.is_empty() {
        if let Some(e) = first_err {
            eprintln!("error: every frame failed, first: {e}");
            return Ok(exit_code(e));
        }
    }
    write_trajectory_tum(&a.out, &est)?;
    println!("localized {} of {} frames", est.len(), seq.frames.len());
    if matched_gt.len() == est.len() && !est.is_empty() {
        let r = eval::evaluate("sequence", &est, &matched_gt, Alignment::None)?;
        print!("{}", eval::format_table(&[r], None));
    }
    Ok(EXIT_OK)
}

fn check_thresholds(r: &MetricReport, max_ate: Option<f64>, max_aae: Option<f64>) -> i32 {
    let mut code = EXIT_OK;
    if let Some(m) = max_ate {
        if !(r.ate_rmse_cm <= m) {
            eprintln!("ATE RMSE {:.6} cm exceeds {m} cm", r.ate_rmse_cm);
            code = EXIT_ASSERT;
        }
    }
    if let Some(m) = max_aae {
        if !(r.aae_rmse_deg <= m) {
            eprintln!("AAE RMSE {:.6} deg exceeds {m} deg", r.aae_rmse_deg);
            code = EXIT_ASSERT;
        }
    }
    code
}

fn cmd_evaluate(a: &EvaluateArgs) -> Result<i32> {
    let est = crate::dataio::read_trajectory_tum(&a.est)?;
    let gt = crate::dataio::read_trajectory_tum(&a.gt)?;
    let (e, g) = eval::match_by_timestamp(&est, &gt, a.max_dt);
    if e.is_empty() {
        return Err(Error::InvalidArgument("no matching timestamps".into()));
    }
    if e.len() < est.len() {
        warn!("{} estimated poses without ground truth", est.len() - e.len());
    }
    let align = if a.align { Alignment::Rigid } else { Alignment::None };
    let r = match &a.report {
        Some(p) => eval::report_sequence(&a.name, &e, &g, align, p)?,
        None => eval::evaluate(&a.name, &e, &g, align)?,
    };
    print!("{}", eval::format_table(std::slice::from_ref(&r), None));
    println!("frames: {}", r.n_frames);
    Ok(check_thresholds(&r, a.assert_max_ate, a.assert_max_aae))
}

fn cmd_gradcheck(a: &GradcheckArgs, cfg: &RunConfig) -> Result<i32> {
    let gc = GradCheckConfig {
        trials: a.trials,
        seed: cfg.seed,
        precision: cfg.render.precision,
        ..Default::default()
    };
    let report = run_gradcheck(&gc)?;
    let (rel, abs) = gc.tolerances();
    println!("tolerance: rel {rel:e} or abs {abs:e}");
    println!("{:>5} {:>9} {:>9} {:>12} {:>12}  result", "trial", "gaussians", "resamples", "max_rel", "max_abs");
    for t in &report.trials {
        println!(
            "{:>5} {:>9} {:>9} {:>12.3e} {:>12.3e}  {}",
            t.trial,
            t.gaussians,
            t.resamples,
            t.max_rel_err,
            t.max_abs_err,
            if t.pass { "pass" } else { "FAIL" }
        );
    }
    let failed = report.trials.iter().filter(|t| !t.pass).count();
    println!("{} of {} trials passed", report.trials.len() - failed, report.trials.len());
    Ok(if report.passed() { EXIT_OK } else { EXIT_ASSERT })
}

/// Parses `tx ty tz qx qy qz qw` (camera-to-world) into a world-to-camera pose.
pub fn parse_pose_arg(s: &str) -> Result<Pose> {
    let v: Vec<f64> = s
        .split(|c: char| c.is_whitespace() || c == ',')
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::InvalidArgument(format!("bad pose {s:?}: {e}")))?;
    if v.len() != 7 || v.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidArgument(format!("pose needs 7 finite numbers, got {s:?}")));
    }
    let q = Quaternion::new(v[6], v[3], v[4], v[5]).normalize()?;
    Pose::new(q, nalgebra::Vector3::new(v[0], v[1], v[2])).inverse()
}

fn cmd_render(a: &RenderArgs, cfg: &RunConfig) -> Result<i32> {
    let scene = load_scene(&a.scene)?;
    let (pose, seq_k) = match (&a.pose, a.frame) {
        (Some(p), _) => (parse_pose_arg(p)?, None),
        (None, Some(i)) => {
            let dir = a.dataset.as_deref().expect("clap enforces --dataset");
            let seq = load_sequence(dir, a.format, cfg)?;
            let f = seq
                .frames
                .get(i)
                .ok_or_else(|| Error::InvalidArgument(format!("frame {i} of {}", seq.frames.len())))?;
            let pose = f
                .gt
                .ok_or_else(|| Error::InvalidArgument(format!("frame {i} has no pose")))?;
            (pose, seq.intrinsics)
        }
        (None, None) => return Err(Error::InvalidArgument("need --pose or --frame".into())),
    };
    let k = match &a.intrinsics {
        Some(p) => read_intrinsics(p)?,
        None => {
            let from_dir = match (&a.dataset, seq_k) {
                (_, Some(k)) => Some(k),
                (Some(d), None) => optional_intrinsics(d)?,
                _ => None,
            };
            cfg.camera.or(from_dir).unwrap_or_else(|| cfg.synth.intrinsics())
        }
    };
    let out = render(&scene, &k, &pose, &cfg.render)?;
    write_png16(&a.out, &out.norm_depth, cfg.dataset.tum_depth_factor)?;
    if let Some(c) = &a.csv {
        write_csv(c, &out.norm_depth)?;
    }
    println!(
        "rendered {}x{}: {} of {} pixels covered",
        k.width,
        k.height,
        out.mask.count(),
        k.pixel_count()
    );
    Ok(EXIT_OK)
}

fn cmd_synth(a: &SynthArgs, cfg: &RunConfig) -> Result<i32> {
    let out = synth_scene(&cfg.synth)?;
    write_synth_dataset(&a.out, &out, cfg.dataset.tum_depth_factor)?;
    println!(
        "wrote {} frames and {} gaussians to {}",
        out.sequence.frames.len(),
        out.scene.len(),
        a.out.display()
    );
    Ok(EXIT_OK)
}
