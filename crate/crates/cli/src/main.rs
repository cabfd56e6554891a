//! `trackvo` command line: run the odometry pipeline, evaluate
//! trajectories and generate synthetic scenes.

// `!(x > 0.0)` is used on purpose: it also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod config;

use clap::{Args, Parser, Subcommand};
use config::{RunConfig, TrackerKind};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use trackvo::eval::{evaluate, parse_tum, write_tum, Trajectory, DEFAULT_RPE_DELTA};
use trackvo::geometry::Intrinsics;
use trackvo::pipeline::{run_sequence, RunOutput};
use trackvo::synth::{generate_scene, render_images, SceneConfig, SceneSpec};
use trackvo::tracker::{CorrelationTracker, ImageDir, OracleTracker, PointTracker, RenderedScene};

#[derive(Parser)]
#[command(name = "trackvo", version, about = "Sparse visual odometry on probabilistic point tracks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate a camera trajectory from a synthetic scene or an image directory.
    Run(RunArgs),
    /// Compare an estimated trajectory with ground truth (TUM format).
    Eval(EvalArgs),
    /// Generate a synthetic scene with ground truth.
    Synth(SynthArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Scene JSON: a full scene or a scene generator config.
    #[arg(long, conflicts_with = "images")]
    scene: Option<PathBuf>,
    /// Directory of PNG frames, read in file-name order; an optional
    /// `timestamps.txt` inside gives one time per frame.
    #[arg(long)]
    images: Option<PathBuf>,
    /// Intrinsics file `fx fy cx cy`, required with --images.
    #[arg(long)]
    intrinsics: Option<PathBuf>,
    /// Front end: oracle (scenes only) or correlation; default oracle for
    /// scenes and correlation for images.
    #[arg(long)]
    tracker: Option<String>,
    /// Config file, `key = value` lines or a JSON object.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override any config key, e.g. `--set gamma_d=1.01`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct EvalArgs {
    /// Estimated trajectory.
    #[arg(long)]
    est: PathBuf,
    /// Ground-truth trajectory.
    #[arg(long)]
    gt: PathBuf,
    /// RPE distance in meters.
    #[arg(long, default_value_t = DEFAULT_RPE_DELTA)]
    delta: f64,
    /// Write `metric,value` CSV here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    /// Scene generator config JSON; defaults otherwise.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    frames: Option<usize>,
    /// Number of independently moving points.
    #[arg(long)]
    dynamic: Option<usize>,
    /// Also render PNG frames into `<out>/images`.
    #[arg(long)]
    render: bool,
    #[arg(long)]
    out: PathBuf,
}

/// Failure with its exit code: 2 for bad input, 3 for runtime errors.
#[derive(Debug)]
enum Failure {
    Input(String),
    Runtime(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Input(_) => 2,
            Failure::Runtime(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Input(m) | Failure::Runtime(m) => m,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => run(a),
        Command::Eval(a) => eval(a),
        Command::Synth(a) => synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}

fn input<E: std::fmt::Display>(e: E) -> Failure {
    Failure::Input(e.to_string())
}

fn runtime<E: std::fmt::Display>(e: E) -> Failure {
    Failure::Runtime(e.to_string())
}

fn write_file(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))
}

/// A scene file holds either a full scene or a generator config.
fn load_scene(path: &Path, seed: u64) -> Result<SceneSpec, Failure> {
    let text = fs::read_to_string(path).map_err(|e| input(format!("{}: {e}", path.display())))?;
    if let Ok(scene) = serde_json::from_str::<SceneSpec>(&text) {
        return Ok(scene);
    }
    let config: SceneConfig =
        serde_json::from_str(&text).map_err(|e| input(format!("{}: not a scene: {e}", path.display())))?;
    generate_scene(&config, seed).map_err(input)
}

fn run(args: RunArgs) -> Result<(), Failure> {
    let mut overrides = Vec::new();
    for (key, value) in [
        ("scene", args.scene.as_ref().map(|p| p.display().to_string())),
        ("images", args.images.as_ref().map(|p| p.display().to_string())),
        ("intrinsics", args.intrinsics.as_ref().map(|p| p.display().to_string())),
        ("out", args.out.as_ref().map(|p| p.display().to_string())),
        ("tracker", args.tracker.clone()),
    ] {
        if let Some(v) = value {
            overrides.push(format!("{key}={}", serde_json::Value::String(v)));
        }
    }
    if let Some(seed) = args.seed {
        overrides.push(format!("seed={seed}"));
    }
    // flags win over both the file and --set
    let all: Vec<String> = args.overrides.iter().cloned().chain(overrides).collect();
    let config = config::resolve(args.config.as_deref(), &all).map_err(Failure::Input)?;
    let out_dir = config.out.clone().unwrap_or_else(|| PathBuf::from("trackvo-out"));

    let (output, gt) = match (&config.scene, &config.images) {
        (Some(scene_path), None) => {
            let scene = load_scene(scene_path, config.seed)?;
            let ts: Vec<f64> = (0..scene.n_frames()).map(|f| scene.timestamp(f)).collect();
            let gt = scene.trajectory();
            let mut tracker: Box<dyn PointTracker> = match config.tracker.unwrap_or(TrackerKind::Oracle) {
                TrackerKind::Oracle => Box::new(OracleTracker::new(scene.clone(), config.oracle())),
                TrackerKind::Correlation => Box::new(CorrelationTracker::new(
                    RenderedScene::new(scene.clone()),
                    scene.intrinsics,
                    config.correlation(),
                )),
            };
            (run_pipeline(tracker.as_mut(), Some(&ts), &config)?, Some(gt))
        }
        (None, Some(dir)) => {
            if config.tracker == Some(TrackerKind::Oracle) {
                return Err(input("the oracle tracker needs a scene, not images"));
            }
            let k_path = config
                .intrinsics
                .as_ref()
                .ok_or_else(|| input(trackvo::pipeline::PipelineError::IntrinsicsMissing))?;
            let k = Intrinsics::load(k_path).map_err(input)?;
            let source = ImageDir::open(dir).map_err(input)?;
            let n = source.paths().len();
            if n == 0 {
                return Err(runtime(trackvo::pipeline::PipelineError::SourceEmpty));
            }
            let ts = match read_timestamps(&dir.join(TIMESTAMPS_FILE))? {
                Some(ts) => ts,
                None => (0..n).map(|f| f as f64 / config.fps).collect(),
            };
            let mut tracker = CorrelationTracker::new(source, k, config.correlation());
            (run_pipeline(&mut tracker, Some(&ts), &config)?, None)
        }
        (Some(_), Some(_)) => return Err(input("give either a scene or images, not both")),
        (None, None) => return Err(input("no input: pass --scene or --images")),
    };

    fs::create_dir_all(&out_dir).map_err(|e| runtime(format!("{}: {e}", out_dir.display())))?;
    write_tum(&out_dir.join("trajectory.txt"), &output.trajectory).map_err(runtime)?;
    write_file(&out_dir.join("tracks.csv"), &tracks_csv(&output))?;
    write_file(&out_dir.join("timing.csv"), &timing_csv(&output))?;
    let resolved = serde_json::to_string_pretty(&config).map_err(runtime)?;
    write_file(&out_dir.join("config.json"), &(resolved + "\n"))?;

    let kept: usize = output.tracks.iter().filter(|t| t.kept).count();
    let total: f64 = output.frames.iter().map(|f| f.t_total).sum();
    println!(
        "frames {}  tracks {} kept / {} dropped  time {:.2} s",
        output.frames.len(),
        kept,
        output.tracks.len() - kept,
        total
    );
    if let Some(gt) = gt {
        let m = evaluate(&output.trajectory, &gt, DEFAULT_RPE_DELTA).map_err(runtime)?;
        println!("ATE {:.6} m  (trajectory extent {:.3} m)", m.ate, gt.extent());
    }
    println!("wrote {}", out_dir.display());
    Ok(())
}

/// Optional per-frame timestamps stored beside rendered images.
const TIMESTAMPS_FILE: &str = "timestamps.txt";

fn read_timestamps(path: &Path) -> Result<Option<Vec<f64>>, Failure> {
    if !path.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(path).map_err(|e| input(format!("{}: {e}", path.display())))?;
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| {
            l.parse::<f64>()
                .map_err(|e| input(format!("{}: '{l}': {e}", path.display())))
        })
        .collect::<Result<Vec<_>, _>>()
        .map(Some)
}

fn run_pipeline(tracker: &mut dyn PointTracker, ts: Option<&[f64]>, config: &RunConfig) -> Result<RunOutput, Failure> {
    run_sequence(tracker, ts, &config.pipeline()).map_err(|e| match e {
        trackvo::pipeline::PipelineError::Config(_) => input(e),
        _ => runtime(e),
    })
}

fn tracks_csv(out: &RunOutput) -> String {
    let mut s = String::from("host,index,point,dyn_score,mean_uncertainty,kept,depth\n");
    for t in &out.tracks {
        let point = t.point.map_or(String::new(), |p| p.to_string());
        let _ = writeln!(
            s,
            "{},{},{},{:.6},{:.6e},{},{:.6}",
            t.host,
            t.index,
            point,
            t.dyn_score,
            t.mean_uncertainty,
            u8::from(t.kept),
            t.depth
        );
    }
    s
}

fn timing_csv(out: &RunOutput) -> String {
    let mut s = String::from(
        "frame,keypoints,active_tracks,kept_tracks,dropped_tracks,ba_observations,ba_initial_cost,ba_final_cost,ba_failed,t_track,t_filter,t_ba,t_total\n",
    );
    for f in &out.frames {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{:.6e},{:.6e},{},{:.6},{:.6},{:.6},{:.6}",
            f.frame,
            f.keypoints,
            f.active_tracks,
            f.kept_tracks,
            f.dropped_tracks,
            f.ba_observations,
            f.ba_initial_cost,
            f.ba_final_cost,
            u8::from(f.ba_failed),
            f.t_track,
            f.t_filter,
            f.t_ba,
            f.t_total
        );
    }
    s
}

fn read_trajectory(path: &Path) -> Result<Trajectory, Failure> {
    let text = fs::read_to_string(path).map_err(|e| input(format!("{}: {e}", path.display())))?;
    let (traj, warnings) = parse_tum(&text).map_err(|e| input(format!("{}: {e}", path.display())))?;
    for w in warnings {
        eprintln!("warning: {} line {}: {}", path.display(), w.line, w.message);
    }
    Ok(traj)
}

fn eval(args: EvalArgs) -> Result<(), Failure> {
    if !(args.delta > 0.0) {
        return Err(input("--delta must be positive"));
    }
    let est = read_trajectory(&args.est)?;
    let gt = read_trajectory(&args.gt)?;
    let m = evaluate(&est, &gt, args.delta).map_err(runtime)?;
    println!("{:<10} {:>14}", "metric", "value");
    println!("{:<10} {:>14.6}  m", "ate", m.ate);
    println!("{:<10} {:>14.6}  m/m", "rpe_trans", m.rpe_trans);
    println!("{:<10} {:>14.6}  deg/m", "rpe_rot", m.rpe_rot);
    if let Some(path) = args.out {
        write_file(&path, &m.to_csv())?;
    }
    Ok(())
}

fn synth(args: SynthArgs) -> Result<(), Failure> {
    let mut config = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| input(format!("{}: {e}", path.display())))?;
            serde_json::from_str::<SceneConfig>(&text).map_err(|e| input(format!("{}: {e}", path.display())))?
        }
        None => SceneConfig::default(),
    };
    if let Some(f) = args.frames {
        config.n_frames = f;
    }
    if let Some(d) = args.dynamic {
        config.n_dynamic = d;
    }
    let scene = generate_scene(&config, args.seed).map_err(input)?;

    fs::create_dir_all(&args.out).map_err(|e| runtime(format!("{}: {e}", args.out.display())))?;
    let json = serde_json::to_string_pretty(&scene).map_err(runtime)?;
    write_file(&args.out.join("scene.json"), &(json + "\n"))?;
    write_tum(&args.out.join("groundtruth.txt"), &scene.trajectory()).map_err(runtime)?;
    write_file(&args.out.join("intrinsics.txt"), &(scene.intrinsics.to_line() + "\n"))?;
    if args.render {
        let dir = args.out.join("images");
        fs::create_dir_all(&dir).map_err(|e| runtime(format!("{}: {e}", dir.display())))?;
        let mut times = String::new();
        for (f, img) in render_images(&scene).iter().enumerate() {
            img.save_png(&dir.join(format!("{f:06}.png"))).map_err(runtime)?;
            let _ = writeln!(times, "{:?}", scene.timestamp(f));
        }
        write_file(&dir.join(TIMESTAMPS_FILE), &times)?;
    }
    println!(
        "scene: {} frames, {} static + {} dynamic points -> {}",
        scene.n_frames(),
        scene.static_points.len(),
        scene.dynamic_points.len(),
        args.out.display()
    );
    Ok(())
}
