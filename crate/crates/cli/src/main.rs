//! `hashcc`: synthesize scenes, train camera-less radiance fields, render
//! and evaluate them, and run the gradient oracle suites.
//!
//! Exit status is 0 on success, 1 on a usage error and 2 when the command
//! itself fails.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, CommandFactory, Parser, Subcommand};
use hashcc::checkpoint;
use hashcc::evaluation::{ablation_table, evaluate_model, model_label, MetricsReport};
use hashcc::gradcheck;
use hashcc::render::render_image;
use hashcc::scene::{load_scene, read_poses, write_poses, ReferenceCamera};
use hashcc::synthetic::{generate_synthetic, SyntheticSpec};
use hashcc::trainer::CHECKPOINT_FILE;
use hashcc::{Config, Error, Trainer};

#[derive(Parser)]
#[command(name = "hashcc", version, about = "Camera-less radiance fields with hash-encoded color correction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic Gaussian-blob scene with reference poses.
    Synth(SynthArgs),
    /// Jointly optimize cameras and the radiance field on a scene.
    Train(TrainArgs),
    /// Render a checkpoint from its learned cameras or a pose file.
    Render(RenderArgs),
    /// Align, refine test cameras and report image and pose metrics.
    Evaluate(EvaluateArgs),
    /// Run every finite-difference gradient suite.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Output scene directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Quadrature samples per ray for the ground-truth images.
    #[arg(long)]
    samples_per_ray: Option<usize>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    height: Option<usize>,
}

/// Configuration sources, applied after the defaults in this order:
/// `<scene>/config.txt`, `--config`, named flags, then `--key value` pairs.
#[derive(Args)]
struct Overrides {
    /// key = value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    downsample: Option<usize>,
    #[arg(long)]
    samples_per_ray: Option<usize>,
    /// he-input or full.
    #[arg(long)]
    detach_mode: Option<String>,
    /// fe or sh.
    #[arg(long)]
    encoding_dir: Option<String>,
    /// Any other configuration key, as `--key value`.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "--KEY VALUE")]
    rest: Vec<String>,
}

#[derive(Args)]
struct TrainArgs {
    /// Scene directory with images/ and optional poses.jsonl and config.txt.
    #[arg(long)]
    scene: PathBuf,
    /// Output directory for the checkpoint, history and learned poses.
    #[arg(long)]
    out: PathBuf,
    /// Continue from <out>/checkpoint.hcc when it exists.
    #[arg(long)]
    resume: bool,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args)]
struct RenderArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// poses.jsonl in the learned frame; defaults to the learned cameras.
    #[arg(long)]
    poses: Option<PathBuf>,
    #[arg(long)]
    samples_per_ray: Option<usize>,
    #[arg(long)]
    render_chunk: Option<usize>,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Scene directory; must contain poses.jsonl.
    #[arg(long)]
    scene: PathBuf,
    /// One or more checkpoints; several produce an ablation table.
    #[arg(long, required = true)]
    checkpoint: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

enum Failure {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e)
    }
}

type CliResult = std::result::Result<(), Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let status = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(status);
        }
    };
    let name = match &cli.command {
        Command::Synth(_) => "synth",
        Command::Train(_) => "train",
        Command::Render(_) => "render",
        Command::Evaluate(_) => "evaluate",
        Command::Gradcheck(_) => "gradcheck",
    };
    let result = match cli.command {
        Command::Synth(a) => synth(a),
        Command::Train(a) => train(a),
        Command::Render(a) => render(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Gradcheck(a) => gradcheck(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}\n");
            let mut cmd = Cli::command();
            if let Some(sub) = cmd.find_subcommand_mut(name) {
                eprintln!("{}", sub.render_usage());
            }
            eprintln!("Run `hashcc {name} --help` for all options.");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn require_dir(path: &Path, what: &str) -> CliResult {
    if path.is_dir() {
        Ok(())
    } else {
        Err(usage(format!("{what} {} is not a directory", path.display())))
    }
}

fn create_dir(path: &Path) -> CliResult {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e).into())
}

fn write_text(path: &Path, text: &str) -> CliResult {
    fs::write(path, text).map_err(|e| Error::io(path, e).into())
}

/// Configuration problems are the caller's to fix, so they are usage errors.
fn config_usage(e: Error) -> Failure {
    match e {
        Error::Config(msg) => usage(msg),
        other => Failure::Runtime(other),
    }
}

impl Overrides {
    fn apply(&self, cfg: &mut Config, scene: Option<&Path>) -> CliResult {
        if let Some(dir) = scene {
            let path = dir.join("config.txt");
            if path.is_file() {
                let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
                cfg.apply_text(&text)
                    .map_err(|e| usage(format!("{}: {e}", path.display())))?;
            }
        }
        if let Some(path) = &self.config {
            let text = fs::read_to_string(path)
                .map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
            cfg.apply_text(&text)
                .map_err(|e| usage(format!("{}: {e}", path.display())))?;
        }
        let named = [
            ("seed", self.seed.map(|v| v.to_string())),
            ("epochs", self.epochs.map(|v| v.to_string())),
            ("downsample", self.downsample.map(|v| v.to_string())),
            ("samples_per_ray", self.samples_per_ray.map(|v| v.to_string())),
            ("detach_mode", self.detach_mode.clone()),
            ("encoding_dir", self.encoding_dir.clone()),
        ];
        for (key, value) in named {
            if let Some(v) = value {
                cfg.set(key, &v).map_err(config_usage)?;
            }
        }
        let mut rest = self.rest.iter();
        while let Some(flag) = rest.next() {
            let key = flag
                .strip_prefix("--")
                .ok_or_else(|| usage(format!("unexpected argument {flag:?}")))?;
            let value = rest
                .next()
                .ok_or_else(|| usage(format!("--{key} needs a value")))?;
            cfg.set(key, value).map_err(config_usage)?;
        }
        cfg.validate().map_err(config_usage)
    }
}

fn synth(a: SynthArgs) -> CliResult {
    let mut spec = SyntheticSpec {
        seed: a.seed,
        ..SyntheticSpec::default()
    };
    if let Some(n) = a.samples_per_ray {
        spec.samples_per_ray = n;
    }
    if let Some(w) = a.width {
        spec.width = w;
    }
    if let Some(h) = a.height {
        spec.height = h;
    }
    spec.validate().map_err(config_usage)?;
    log::info!(
        "rendering {} views at {}×{} with {} samples per ray",
        spec.trajectory.count,
        spec.width,
        spec.height,
        spec.samples_per_ray
    );
    let scene = generate_synthetic(&spec)?;
    scene.save(&a.out)?;
    println!("wrote {} images to {}", scene.images.len(), a.out.display());
    Ok(())
}

fn train(a: TrainArgs) -> CliResult {
    require_dir(&a.scene, "scene")?;
    let ckpt_path = a.out.join(CHECKPOINT_FILE);
    let resumed = if a.resume && ckpt_path.is_file() {
        Some(checkpoint::load(&ckpt_path)?)
    } else {
        None
    };
    // A resumed run starts from its saved configuration; a fresh one from
    // the scene's.
    let mut cfg = Config::default();
    match &resumed {
        Some(ckpt) => {
            cfg.train = ckpt.config.clone();
            a.overrides.apply(&mut cfg, None)?;
            if cfg.train.field != ckpt.config.field {
                return Err(usage("the field architecture of a resumed run cannot change"));
            }
        }
        None => a.overrides.apply(&mut cfg, Some(&a.scene))?,
    }
    let scene = load_scene(&a.scene, cfg.downsample)?;
    create_dir(&a.out)?;
    let mut trainer = match resumed {
        Some(ckpt) => {
            let mut t = ckpt.into_trainer(&scene)?;
            t.config = cfg.train.clone();
            log::info!("resuming at iteration {} of {}", t.iteration, t.total_iterations());
            t
        }
        None => Trainer::new(&scene, cfg.train.clone())?,
    };
    write_text(&a.out.join("config.txt"), &cfg.to_text())?;
    log::info!(
        "training on {} images of {}×{} for {} iterations",
        scene.train.len(),
        scene.width(),
        scene.height(),
        trainer.total_iterations()
    );
    trainer.run(Some(&a.out))?;

    let learned: Vec<(String, ReferenceCamera)> = scene
        .train
        .iter()
        .zip(trainer.cameras.poses())
        .enumerate()
        .map(|(k, (&i, pose))| {
            let cam = ReferenceCamera {
                pose,
                focal: trainer.cameras.focal(k),
            };
            (scene.names[i].clone(), cam)
        })
        .collect();
    write_poses(&a.out.join("poses.jsonl"), &learned)?;
    println!(
        "trained {} iterations; checkpoint {}",
        trainer.iteration,
        ckpt_path.display()
    );
    Ok(())
}

fn render(a: RenderArgs) -> CliResult {
    let ckpt = checkpoint::load(&a.checkpoint)?;
    let mut cfg = Config {
        train: ckpt.config.clone(),
        ..Config::default()
    };
    if let Some(n) = a.samples_per_ray {
        cfg.set("samples_per_ray", &n.to_string()).map_err(config_usage)?;
    }
    if let Some(c) = a.render_chunk {
        cfg.set("render_chunk", &c.to_string()).map_err(config_usage)?;
    }
    cfg.validate().map_err(config_usage)?;
    let opts = cfg.eval_options().render;
    let cams = &ckpt.cameras;
    let views: Vec<(String, ReferenceCamera)> = match &a.poses {
        Some(path) => read_poses(path)?,
        None => (0..cams.len())
            .map(|i| {
                let cam = ReferenceCamera {
                    pose: cams.pose(i),
                    focal: cams.focal(i),
                };
                (format!("view_{i:03}.png"), cam)
            })
            .collect(),
    };
    create_dir(&a.out)?;
    for (name, cam) in &views {
        let (main, corrected) =
            render_image(&ckpt.field, &cam.pose, cam.focal, cams.width(), cams.height(), &opts)?;
        let stem = Path::new(name)
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| name.clone());
        main.write_png(&a.out.join(format!("{stem}_main.png")))?;
        corrected.write_png(&a.out.join(format!("{stem}_corrected.png")))?;
        log::info!("rendered {stem}");
    }
    println!("rendered {} views to {}", views.len(), a.out.display());
    Ok(())
}

fn evaluate(a: EvaluateArgs) -> CliResult {
    require_dir(&a.scene, "scene")?;
    create_dir(&a.out)?;
    let scene_name = a
        .scene
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "scene".into());
    let mut reports: Vec<MetricsReport> = Vec::new();
    let mut summary = String::new();
    for path in &a.checkpoint {
        let ckpt = checkpoint::load(path)?;
        let mut cfg = Config {
            train: ckpt.config.clone(),
            ..Config::default()
        };
        a.overrides.apply(&mut cfg, None)?;
        let scene = load_scene(&a.scene, cfg.downsample)?;
        let (mut report, renders) =
            evaluate_model(&ckpt.field, &ckpt.cameras, &scene, &cfg.eval_options())?;
        let base = model_label(ckpt.config.field.direction, ckpt.config.field.color_correction);
        let taken = reports.iter().filter(|r| r.label.starts_with(&base)).count();
        report.label = if taken == 0 { base } else { format!("{base}-{}", taken + 1) };

        write_text(&a.out.join(format!("metrics_{}.csv", report.label)), &report.to_csv())?;
        let render_dir = a.out.join("renders").join(&report.label);
        create_dir(&render_dir)?;
        for r in &renders {
            let stem = Path::new(&r.name)
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| r.name.clone());
            r.main.write_png(&render_dir.join(format!("{stem}_main.png")))?;
            r.corrected.write_png(&render_dir.join(format!("{stem}_corrected.png")))?;
        }
        let _ = writeln!(summary, "{}", report.to_table(&scene_name));
        reports.push(report);
    }
    if reports.len() > 1 {
        let _ = writeln!(summary, "{}", ablation_table(&scene_name, &reports));
    }
    write_text(&a.out.join("summary.txt"), &summary)?;
    print!("{summary}");
    Ok(())
}

fn gradcheck(a: GradcheckArgs) -> CliResult {
    let mut failed = Vec::new();
    for suite in gradcheck::suites() {
        let report = suite.run(a.seed)?;
        println!("{report}");
        if !report.passed() {
            failed.push(report.name);
        }
    }
    if failed.is_empty() {
        println!("all suites passed");
        Ok(())
    } else {
        Err(Failure::Runtime(Error::InvalidArgument(format!(
            "gradient check failed: {}",
            failed.join(", ")
        ))))
    }
}
