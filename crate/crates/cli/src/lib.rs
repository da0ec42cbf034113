//! Command implementations behind the `pseudoloc` binary.
//!
//! Every command writes only under its declared output location and leaves a
//! `manifest.json` recording the command, its full configuration, the seed
//! and the crate version.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use pseudoloc::autodiff::{checkpoint, AdamConfig};
use pseudoloc::data::{self, load_depth_png, load_frame_paths, load_split, write_scene, Frame};
use pseudoloc::eval::{evaluate_predictions, mean_pose, EvalReport, FrameRecord};
use pseudoloc::geometry::{convolve_depth, depth_to_pointcloud, smear_metric, SmearStats};
use pseudoloc::ply::save_ply;
use pseudoloc::synth::{self, midpoint_params, synth_frames_at, trajectory_params, SYNTH_SCENE_NAME};
use pseudoloc::train::{
    checkpoint_model_config, derive_seed, prepare_input, LrSchedule, TrainConfig, TrainSet, Trainer,
};
use pseudoloc::{CameraIntrinsics, DepthMap, Error, ModelConfig, ModelKind, Pose, PoseModel};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Parser)]
#[command(name = "pseudoloc", version, about = "Pseudo-LiDAR camera pose regression")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a pose regressor.
    Train(TrainArgs),
    /// Evaluate checkpoints (or the mean-pose baseline) on test frames.
    Eval(EvalArgs),
    /// Lift a depth PNG to an ASCII PLY point cloud.
    Convert(ConvertArgs),
    /// Box-filter a depth map and measure how far the lifted points move.
    Smear(SmearArgs),
    /// Write a synthetic scene in the dataset directory layout.
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Copy, Args, Serialize)]
pub struct IntrinsicsArgs {
    #[arg(long, default_value_t = 585.0)]
    pub fu: f64,
    #[arg(long, default_value_t = 585.0)]
    pub fv: f64,
    #[arg(long, default_value_t = 320.0)]
    pub cu: f64,
    #[arg(long, default_value_t = 240.0)]
    pub cv: f64,
    #[arg(long, default_value_t = 640)]
    pub width: usize,
    #[arg(long, default_value_t = 480)]
    pub height: usize,
}

impl Default for IntrinsicsArgs {
    fn default() -> Self {
        let k = CameraIntrinsics::seven_scenes();
        Self {
            fu: k.fu,
            fv: k.fv,
            cu: k.cu,
            cv: k.cv,
            width: k.width,
            height: k.height,
        }
    }
}

impl IntrinsicsArgs {
    pub fn build(&self) -> Result<CameraIntrinsics> {
        Ok(CameraIntrinsics::new(
            self.fu,
            self.fv,
            self.cu,
            self.cv,
            self.width,
            self.height,
        )?)
    }

    fn build_for(&self, width: usize, height: usize) -> Result<CameraIntrinsics> {
        Ok(CameraIntrinsics::new(
            self.fu, self.fv, self.cu, self.cv, width, height,
        )?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// Full-width layers.
    Full,
    /// Narrow layers for CPU-scale runs.
    Desk,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Schedule {
    Constant,
    Cosine,
}

fn parse_model(s: &str) -> std::result::Result<ModelKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TrainArgs {
    /// Dataset root holding `<scene>/TrainSplit.txt` and sequence folders.
    #[arg(
        long,
        required_unless_present = "synthetic",
        conflicts_with = "synthetic",
        requires = "scene"
    )]
    pub data_root: Option<PathBuf>,
    #[arg(long)]
    pub scene: Option<String>,
    /// Train on a generated scene instead of files.
    #[arg(long)]
    pub synthetic: bool,
    #[arg(long, default_value_t = 50)]
    pub synthetic_frames: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Upper bound on epochs; training also stops at convergence.
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub lr: f64,
    #[arg(long, default_value_t = 5e-4)]
    pub weight_decay: f64,
    #[arg(long, value_enum, default_value_t = Schedule::Constant)]
    pub schedule: Schedule,
    /// Network kind; overrides the kind in `--config`.
    #[arg(long, value_parser = parse_model)]
    pub model: Option<ModelKind>,
    /// Model configuration (TOML); defaults to `--preset`.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Preset::Full)]
    pub preset: Preset,
    /// Resume from this checkpoint.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Redraw crops and point samples every epoch.
    #[arg(long)]
    pub augment: bool,
    /// Run all epochs even after the loss has plateaued.
    #[arg(long)]
    pub no_early_stop: bool,
    #[command(flatten)]
    pub intrinsics: IntrinsicsArgs,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long, required_unless_present = "synthetic", conflicts_with = "synthetic")]
    pub data_root: Option<PathBuf>,
    /// Scenes to evaluate; repeat the flag. Defaults to every scene.
    #[arg(long)]
    pub scene: Vec<String>,
    #[arg(long)]
    pub synthetic: bool,
    /// Frames in the synthetic training trajectory.
    #[arg(long, default_value_t = 50)]
    pub synthetic_frames: usize,
    /// Held-out synthetic frames, placed between training frames.
    #[arg(long, default_value_t = 10)]
    pub test_frames: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// One checkpoint for all scenes, or one per `--scene` in order.
    #[arg(long, required_unless_present = "mean_pose")]
    pub checkpoint: Vec<PathBuf>,
    /// Expected model configuration; must match the checkpoint.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Evaluate the constant mean-of-training-poses predictor instead.
    #[arg(long, conflicts_with = "checkpoint")]
    pub mean_pose: bool,
    #[command(flatten)]
    pub intrinsics: IntrinsicsArgs,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ConvertArgs {
    /// 16-bit depth PNG in millimetres.
    #[arg(long)]
    pub depth: PathBuf,
    /// Intrinsics; width and height come from the PNG.
    #[command(flatten)]
    pub intrinsics: IntrinsicsArgs,
    /// Output PLY path.
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SyntheticDepth {
    /// Left half at 1 m, right half at 3 m.
    Step,
    /// Flat wall at 2 m.
    Constant,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SmearArgs {
    #[arg(long, required_unless_present = "synthetic", conflicts_with = "synthetic")]
    pub depth: Option<PathBuf>,
    /// Use a generated depth map at the given intrinsics.
    #[arg(long, value_enum)]
    pub synthetic: Option<SyntheticDepth>,
    #[arg(long, default_value_t = 11)]
    pub kernel: usize,
    #[command(flatten)]
    pub intrinsics: IntrinsicsArgs,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Frames along the trajectory (training sequence).
    #[arg(long, default_value_t = 50)]
    pub frames: usize,
    /// Held-out frames between training frames (test sequence).
    #[arg(long, default_value_t = 0)]
    pub test_frames: usize,
    #[command(flatten)]
    pub intrinsics: IntrinsicsArgs,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(a) => cmd_train(&a).map(|_| ()),
        Command::Eval(a) => {
            let report = cmd_eval(&a)?;
            print!("{}", report.to_table());
            Ok(())
        }
        Command::Convert(a) => cmd_convert(&a).map(|_| ()),
        Command::Smear(a) => {
            let s = cmd_smear(&a)?;
            println!(
                "mean displacement {:.6} m, max displacement {:.6} m",
                s.mean_displacement, s.max_displacement
            );
            Ok(())
        }
        Command::Synth(a) => cmd_synth(&a),
    }
}

/// Machine-parsable one-line description of a failure.
pub fn error_line(err: &anyhow::Error) -> String {
    let category = err
        .chain()
        .find_map(|e| {
            e.downcast_ref::<Error>()
                .map(Error::category)
                .or_else(|| e.downcast_ref::<std::io::Error>().map(|_| "io"))
        })
        .unwrap_or("invalid-input");
    let message = format!("{err:#}").replace(['\n', '\r'], " ");
    format!("error category={category} message={message}")
}

fn rejected(msg: impl Into<String>) -> anyhow::Error {
    Error::InvalidInput(msg.into()).into()
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    Ok(())
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(())
}

fn write_manifest<T: Serialize>(path: &Path, command: &str, seed: Option<u64>, config: &T) -> Result<()> {
    let manifest = serde_json::json!({
        "command": command,
        "version": VERSION,
        "seed": seed,
        "config": config,
    });
    write_file(path, serde_json::to_string_pretty(&manifest)? + "\n")
}

fn display_name(kind: ModelKind) -> &'static str {
    match kind {
        ModelKind::Fusionloc => "FusionLoc",
        ModelKind::PointnetPose => "PointNet-Pose",
        ModelKind::DepthPosenet => "Depth-PoseNet",
    }
}

fn model_config(args: &TrainArgs) -> Result<ModelConfig> {
    let mut config = match &args.config {
        Some(p) => ModelConfig::load(p)?,
        None => match args.preset {
            Preset::Full => ModelConfig::default(),
            Preset::Desk => ModelConfig::desk(),
        },
    };
    if let Some(kind) = args.model {
        config.kind = kind;
    }
    config.seed = args.seed;
    config.validate()?;
    Ok(config)
}

fn train_set(args: &TrainArgs, k: &CameraIntrinsics) -> Result<TrainSet> {
    if args.synthetic {
        if args.synthetic_frames == 0 {
            bail!(rejected("--synthetic-frames must be at least 1"));
        }
        let frames = synth_frames_at(args.seed, &trajectory_params(args.synthetic_frames), 0, k)?;
        return Ok(TrainSet::new(frames, *k)?);
    }
    let root = args.data_root.as_ref().expect("clap enforces a data source");
    let scene = args.scene.as_deref().expect("clap requires --scene with --data-root");
    let split = load_split(root, scene)?;
    if split.train.is_empty() {
        return Err(Error::Ingestion {
            path: root.join(scene),
            message: "no training frames listed in TrainSplit.txt".into(),
        }
        .into());
    }
    Ok(TrainSet::from_paths(split.train, *k)?)
}

/// Trains (or resumes) and returns the final trainer state. Writes
/// `manifest.json`, `model.toml`, `metrics.jsonl` (one record per epoch) and
/// `checkpoint.bin` (refreshed after every epoch) under `--out`.
pub fn cmd_train(args: &TrainArgs) -> Result<Trainer> {
    let k = args.intrinsics.build()?;
    let mut trainer = match &args.checkpoint {
        Some(path) => {
            let mut t = Trainer::load(path)?;
            t.config.epochs = args.epochs;
            t
        }
        None => {
            let config = model_config(args)?;
            let train = TrainConfig {
                epochs: args.epochs,
                batch_size: args.batch_size,
                adam: AdamConfig {
                    lr: args.lr,
                    weight_decay: args.weight_decay,
                    ..AdamConfig::default()
                },
                seed: args.seed,
                augment: args.augment,
                stop_at_convergence: !args.no_early_stop,
                schedule: match args.schedule {
                    Schedule::Constant => LrSchedule::Constant,
                    Schedule::Cosine => LrSchedule::Cosine,
                },
            };
            Trainer::new(PoseModel::new(config)?, train)?
        }
    };
    let mut data = train_set(args, &k)?;

    create_dir(&args.out)?;
    write_manifest(
        &args.out.join("manifest.json"),
        "train",
        Some(trainer.config.seed),
        &serde_json::json!({
            "args": args,
            "train": trainer.config,
            "model": trainer.model.config(),
        }),
    )?;
    write_file(&args.out.join("model.toml"), trainer.model.config().to_toml())?;
    let metrics_path = args.out.join("metrics.jsonl");
    let mut metrics = OpenOptions::new()
        .create(true)
        .append(args.checkpoint.is_some())
        .write(true)
        .truncate(args.checkpoint.is_none())
        .open(&metrics_path)
        .with_context(|| format!("opening {}", metrics_path.display()))?;
    let ck_path = args.out.join("checkpoint.bin");
    println!(
        "training {} ({} parameters) on {} frames",
        display_name(trainer.model.kind()),
        trainer.model.parameter_count(),
        data.len()
    );
    trainer.fit(&mut data, |t, s| {
        let line = serde_json::json!({
            "epoch": s.epoch,
            "loss": s.loss,
            "beta": s.beta,
            "gamma": s.gamma,
            "steps": s.steps,
            "lr": t.adam.config.lr,
        });
        writeln!(metrics, "{line}").map_err(|e| Error::Io {
            path: metrics_path.clone(),
            source: e,
        })?;
        t.save(&ck_path)?;
        println!(
            "epoch {:>4}  loss {:>10.5}  beta {:>8.4}  gamma {:>8.4}",
            s.epoch, s.loss, s.beta, s.gamma
        );
        Ok(())
    })?;
    if trainer.converged() {
        println!("converged after {} epochs", trainer.epoch);
    }
    Ok(trainer)
}

type Predictor = dyn Fn(&Frame, usize) -> Result<Pose>;

struct EvalScene {
    name: String,
    test: Vec<TestFrame>,
    train_poses: Vec<Pose>,
}

enum TestFrame {
    Loaded(Box<Frame>),
    Path(data::FramePaths),
}

impl TestFrame {
    fn load(&self, k: &CameraIntrinsics) -> Result<Frame> {
        Ok(match self {
            TestFrame::Loaded(f) => (**f).clone(),
            TestFrame::Path(p) => load_frame_paths(p, k)?,
        })
    }
}

fn eval_scenes(args: &EvalArgs, k: &CameraIntrinsics) -> Result<Vec<EvalScene>> {
    if args.synthetic {
        let params = midpoint_params(args.synthetic_frames, args.test_frames)?;
        let test = synth_frames_at(args.seed, &params, args.synthetic_frames, k)?;
        let scene = synth::SynthScene::new(args.seed);
        return Ok(vec![EvalScene {
            name: SYNTH_SCENE_NAME.into(),
            test: test.into_iter().map(|f| TestFrame::Loaded(Box::new(f))).collect(),
            train_poses: trajectory_params(args.synthetic_frames)
                .into_iter()
                .map(|s| scene.pose_at(s))
                .collect(),
        }]);
    }
    let root = args.data_root.as_ref().expect("clap enforces a data source");
    let names = if args.scene.is_empty() {
        data::list_scenes(root)?
    } else {
        args.scene.clone()
    };
    if names.is_empty() {
        return Err(Error::Ingestion {
            path: root.clone(),
            message: "no scenes with split files found".into(),
        }
        .into());
    }
    names
        .into_iter()
        .map(|name| {
            let split = load_split(root, &name)?;
            if split.test.is_empty() {
                return Err(Error::Ingestion {
                    path: root.join(&name),
                    message: "no test frames listed in TestSplit.txt".into(),
                }
                .into());
            }
            let train_poses = if args.mean_pose {
                split
                    .train
                    .iter()
                    .map(|p| data::load_pose(&p.pose))
                    .collect::<pseudoloc::Result<_>>()?
            } else {
                Vec::new()
            };
            Ok(EvalScene {
                name,
                test: split.test.into_iter().map(TestFrame::Path).collect(),
                train_poses,
            })
        })
        .collect()
}

fn load_model(path: &Path, expected: Option<&ModelConfig>) -> Result<PoseModel> {
    let ck = checkpoint::load(path)?;
    let config = checkpoint_model_config(&ck).ok_or_else(|| Error::Ingestion {
        path: path.to_path_buf(),
        message: "checkpoint carries no model configuration".into(),
    })??;
    if let Some(expected) = expected {
        if *expected != config {
            bail!(rejected(format!(
                "checkpoint {} was trained with a different model configuration",
                path.display()
            )));
        }
    }
    Ok(PoseModel::from_checkpoint(config, &ck)?)
}

/// Per-frame errors, per-scene medians and the "Average" row, written to
/// `report.json` and `report.txt` under `--out`.
pub fn cmd_eval(args: &EvalArgs) -> Result<EvalReport> {
    let k = args.intrinsics.build()?;
    let scenes = eval_scenes(args, &k)?;
    let expected = args.config.as_deref().map(ModelConfig::load).transpose()?;
    if !args.mean_pose && args.checkpoint.len() != 1 && args.checkpoint.len() != scenes.len() {
        bail!(rejected(format!(
            "{} checkpoints for {} scenes; pass one, or one per scene",
            args.checkpoint.len(),
            scenes.len()
        )));
    }
    let mut records = Vec::new();
    let mut label = "Mean pose".to_string();
    for (si, scene) in scenes.iter().enumerate() {
        let predictor: Box<Predictor> = if args.mean_pose {
            let m = mean_pose(&scene.train_poses)?;
            Box::new(move |_, _| Ok(m))
        } else {
            let path = &args.checkpoint[si.min(args.checkpoint.len() - 1)];
            let model = load_model(path, expected.as_ref())?;
            label = display_name(model.kind()).to_string();
            let seed = args.seed;
            Box::new(move |f: &Frame, i: usize| {
                let input = prepare_input(model.config(), f, &k, false, derive_seed(seed, i as u64, 0))?;
                Ok(model.predict(&input)?)
            })
        };
        for (i, t) in scene.test.iter().enumerate() {
            let frame = t.load(&k)?;
            records.push(FrameRecord {
                scene: scene.name.clone(),
                sequence: frame.sequence.clone(),
                index: frame.index,
                predicted: predictor(&frame, i)?,
                truth: frame.pose,
            });
        }
    }
    let report = evaluate_predictions(&label, &records)?;
    create_dir(&args.out)?;
    write_manifest(&args.out.join("manifest.json"), "eval", Some(args.seed), args)?;
    write_file(&args.out.join("report.json"), report.to_json() + "\n")?;
    write_file(&args.out.join("report.txt"), report.to_table())?;
    Ok(report)
}

/// Lifts a depth PNG and writes the cloud as PLY. A sibling
/// `<out>.manifest.json` records the run. Returns the vertex count.
pub fn cmd_convert(args: &ConvertArgs) -> Result<usize> {
    let (depth, _) = load_depth_png(&args.depth)?;
    let k = args.intrinsics.build_for(depth.width(), depth.height())?;
    let cloud = depth_to_pointcloud(&depth, &k)?;
    if cloud.is_empty() {
        return Err(Error::Degenerate(format!("{} has no valid depth pixels", args.depth.display())).into());
    }
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    save_ply(&args.out, &cloud, None)?;
    let mut manifest = args.out.clone().into_os_string();
    manifest.push(".manifest.json");
    write_manifest(Path::new(&manifest), "convert", None, args)?;
    Ok(cloud.len())
}

fn smear_input(args: &SmearArgs) -> Result<(DepthMap, CameraIntrinsics)> {
    match (&args.depth, args.synthetic) {
        (Some(p), _) => {
            let (d, _) = load_depth_png(p)?;
            let k = args.intrinsics.build_for(d.width(), d.height())?;
            Ok((d, k))
        }
        (None, Some(kind)) => {
            let k = args.intrinsics.build()?;
            let d = match kind {
                SyntheticDepth::Step => synth::step_depth_map(&k, 1.0, 3.0)?,
                SyntheticDepth::Constant => synth::constant_depth_map(&k, 2.0)?,
            };
            Ok((d, k))
        }
        (None, None) => bail!(rejected("pass --depth or --synthetic")),
    }
}

/// Writes `original.ply`, `convolved.ply` and `smear.json` under `--out`.
pub fn cmd_smear(args: &SmearArgs) -> Result<SmearStats> {
    let (depth, k) = smear_input(args)?;
    let original = depth_to_pointcloud(&depth, &k)?;
    if original.is_empty() {
        return Err(Error::Degenerate("depth map has no valid pixels".into()).into());
    }
    let convolved = depth_to_pointcloud(&convolve_depth(&depth, args.kernel)?, &k)?;
    let stats = smear_metric(&original, &convolved)?;
    create_dir(&args.out)?;
    save_ply(&args.out.join("original.ply"), &original, None)?;
    save_ply(&args.out.join("convolved.ply"), &convolved, None)?;
    let body = serde_json::json!({
        "kernel": args.kernel,
        "points": original.len(),
        "mean_displacement_m": stats.mean_displacement,
        "max_displacement_m": stats.max_displacement,
    });
    write_file(
        &args.out.join("smear.json"),
        serde_json::to_string_pretty(&body)? + "\n",
    )?;
    write_manifest(&args.out.join("manifest.json"), "smear", None, args)?;
    Ok(stats)
}

/// Writes `<out>/synthetic/` in the dataset layout: `seq-01` holds the
/// trajectory frames, `seq-02` the held-out ones (if any).
pub fn cmd_synth(args: &SynthArgs) -> Result<()> {
    if args.frames == 0 {
        bail!(rejected("--frames must be at least 1"));
    }
    let k = args.intrinsics.build()?;
    let train = synth_frames_at(args.seed, &trajectory_params(args.frames), 0, &k)?;
    let test = if args.test_frames > 0 {
        let mut t = synth_frames_at(
            args.seed,
            &midpoint_params(args.frames, args.test_frames)?,
            args.frames,
            &k,
        )?;
        for f in &mut t {
            f.sequence = "seq-02".into();
        }
        t
    } else {
        Vec::new()
    };
    create_dir(&args.out)?;
    write_scene(&args.out, SYNTH_SCENE_NAME, &train, &test)?;
    write_manifest(&args.out.join("manifest.json"), "synth", Some(args.seed), args)?;
    Ok(())
}

/// Buffered JSON-lines reader for `metrics.jsonl`.
pub fn read_metrics(path: &Path) -> Result<Vec<serde_json::Value>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).with_context(|| format!("parsing {}", path.display())))
        .collect()
}
