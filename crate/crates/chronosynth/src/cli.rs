//! `chronosynth` command line. Exit codes: 0 success, 2 usage error,
//! 3 runtime failure.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use chronosynth_core::data::synthetic::SyntheticConfig;
use chronosynth_core::data::Direction;
use chronosynth_core::Preset;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::checkpoint::{self, INDEX_FILE};
use crate::dataset::{manifest_path, write_json, write_synthetic, Dataset, SplitName};
use crate::error::Error;
use crate::evaluate::{evaluate_dataset, missing_generated, GeneratedDir, ImageSource, ModelSource, NearestLr, Passthrough};
use crate::metrics::{metrics_from_names, DEFAULT_METRICS};
use crate::run::{generate_run, seed_from_env, train_run, GenerateConfig, RunConfig, FINAL_CHECKPOINT};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "chronosynth", version, about = "Conditional pixel synthesis of high-resolution imagery across time")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Render a deterministic synthetic dataset.
    SynthData(SynthArgs),
    /// Train from a JSON run config.
    Train(TrainArgs),
    /// Generate HR(t) for every (t, t') pair of a dataset.
    Generate(GenerateArgs),
    /// Score generated images, a checkpoint or a baseline against ground truth.
    Evaluate(EvaluateArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 16)]
    pub locations: usize,
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    #[arg(long, default_value_t = 8)]
    pub factor: usize,
    #[arg(long, default_value_t = 2)]
    pub timestamps: usize,
    /// Standard deviation of LR noise (unit range).
    #[arg(long, default_value_t = 0.0)]
    pub noise: f32,
    /// Share of locations held out for testing.
    #[arg(long, default_value_t = 0.25)]
    pub test_fraction: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    pub config: PathBuf,
    #[arg(long)]
    pub preset: Option<Preset>,
    /// Checkpoint directory to continue from.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Overrides `data.manifest`.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Overrides `train.total_steps`.
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long, default_value = "run")]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum DirectionArg {
    /// t' > t
    Past,
    /// t' < t
    Future,
    All,
}

impl From<DirectionArg> for Direction {
    fn from(d: DirectionArg) -> Self {
        match d {
            DirectionArg::Past => Direction::Past,
            DirectionArg::Future => Direction::Future,
            DirectionArg::All => Direction::All,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Test,
    All,
}

impl SplitArg {
    fn split(self) -> Option<SplitName> {
        match self {
            SplitArg::Train => Some(SplitName::Train),
            SplitArg::Test => Some(SplitName::Test),
            SplitArg::All => None,
        }
    }
}

#[derive(Args, Debug, Clone)]
pub struct WindowArgs {
    /// Use sliding-window generation.
    #[arg(long)]
    pub sliding: bool,
    /// Sliding-window side; defaults to the training crop side.
    #[arg(long = "S", alias = "window")]
    pub window: Option<usize>,
    #[arg(long = "lambda-s", default_value_t = 1.0)]
    pub lambda_s: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    pub checkpoint: PathBuf,
    pub manifest: PathBuf,
    #[arg(long, value_enum, default_value_t = DirectionArg::All)]
    pub direction: DirectionArg,
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    pub split: SplitArg,
    #[command(flatten)]
    pub window: WindowArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Baseline {
    /// The ground truth itself.
    Passthrough,
    /// Nearest-neighbour upsampled LR(t).
    Nearest,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    pub manifest: PathBuf,
    /// Directory of generated images, or a checkpoint directory.
    #[arg(required_unless_present = "baseline", conflicts_with = "baseline")]
    pub source: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub baseline: Option<Baseline>,
    #[arg(long, value_enum, default_value_t = DirectionArg::All)]
    pub direction: DirectionArg,
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    pub split: SplitArg,
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_METRICS.map(String::from))]
    pub metrics: Vec<String>,
    #[command(flatten)]
    pub window: WindowArgs,
    #[arg(long)]
    pub out: PathBuf,
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

impl From<chronosynth_core::Error> for Failure {
    fn from(e: chronosynth_core::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

type Outcome = std::result::Result<(), Failure>;

fn usage(lines: Vec<String>) -> Failure {
    Failure::Usage(lines.join("\n  "))
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let result = match cli.command {
        Command::SynthData(a) => synth_data(a),
        Command::Train(a) => train(a),
        Command::Generate(a) => generate(a),
        Command::Evaluate(a) => evaluate(a),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            EXIT_USAGE
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            EXIT_RUNTIME
        }
    }
}

fn env_seed(flag: u64) -> std::result::Result<u64, Failure> {
    Ok(seed_from_env().map_err(Failure::Usage)?.unwrap_or(flag))
}

fn synth_data(a: SynthArgs) -> Outcome {
    let cfg = SyntheticConfig { seed: env_seed(a.seed)?, locations: a.locations, size: a.size, factor: a.factor, timestamps: a.timestamps, lr_noise: a.noise };
    cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    if !(0.0..1.0).contains(&a.test_fraction) {
        return Err(Failure::Usage(format!("--test-fraction must lie in [0, 1), got {}", a.test_fraction)));
    }
    write_synthetic(&cfg, a.test_fraction, &a.out)?;
    println!("{}", a.out.join(crate::dataset::MANIFEST_FILE).display());
    Ok(())
}

fn train(a: TrainArgs) -> Outcome {
    let mut cfg = match RunConfig::load(&a.config) {
        Ok(Ok(c)) => c,
        Ok(Err(bad)) => return Err(usage(bad)),
        Err(e) => return Err(Failure::Usage(e.to_string())),
    };
    if let Some(p) = a.preset {
        cfg = cfg.with_preset(p);
    }
    if let Some(m) = a.manifest {
        cfg.data.manifest = Some(m);
    }
    if let Some(s) = a.steps {
        cfg.train.total_steps = s;
    }
    cfg.apply_seed_env().map_err(Failure::Usage)?;
    cfg.validate().map_err(usage)?;
    let manifest = cfg.data.manifest.clone().ok_or_else(|| Failure::Usage("data.manifest (or --manifest) is required".into()))?;
    let dataset = Dataset::open(&manifest)?;
    let total = cfg.train.total_steps;
    let state = train_run(&cfg, &dataset, &a.out, a.resume.as_deref(), |s| {
        if s.step % 100 == 0 {
            eprintln!("step {:>7}/{total}  g {:.4}  d {:.4}  l1 {:.4}", s.step, s.g_loss, s.d_loss, s.l1);
        }
    })?;
    println!("trained to step {}; checkpoint at {}", state.step, a.out.join(FINAL_CHECKPOINT).display());
    Ok(())
}

fn check_window(w: &WindowArgs, image_size: usize, default: usize) -> Outcome {
    if !(w.lambda_s > 0.0) {
        return Err(Failure::Usage(format!("--lambda-s must be > 0, got {}", w.lambda_s)));
    }
    let s = w.window.unwrap_or(default);
    if w.sliding && (s == 0 || s % 4 != 0 || s > image_size || image_size % s != 0) {
        return Err(Failure::Usage(format!("--S must be a multiple of 4 dividing {image_size}, got {s}")));
    }
    Ok(())
}

fn generate(a: GenerateArgs) -> Outcome {
    let seed = env_seed(a.window.seed)?;
    let state = checkpoint::load(&a.checkpoint, None)?;
    check_window(&a.window, state.model.image_size, state.model.train_size())?;
    let dataset = Dataset::open(&a.manifest)?;
    let cfg = GenerateConfig {
        checkpoint: a.checkpoint.clone(),
        manifest: manifest_path(&a.manifest),
        direction: a.direction.into(),
        split: a.split.split(),
        sliding: a.window.sliding,
        window: a.window.window,
        lambda_s: a.window.lambda_s,
        seed,
        model: state.model.clone(),
    };
    let written = generate_run(&cfg, &state, &dataset, &a.out)?;
    println!("wrote {} images to {}", written.len(), a.out.display());
    Ok(())
}

#[derive(Serialize)]
struct EvaluateDump<'a> {
    manifest: PathBuf,
    source: Option<&'a Path>,
    baseline: Option<Baseline>,
    direction: Direction,
    split: Option<SplitName>,
    metrics: &'a [String],
    sliding: bool,
    #[serde(rename = "S")]
    window: Option<usize>,
    lambda_s: f64,
    seed: u64,
}

fn evaluate(a: EvaluateArgs) -> Outcome {
    let seed = env_seed(a.window.seed)?;
    let metrics = metrics_from_names(&a.metrics).map_err(usage)?;
    let dataset = Dataset::open(&a.manifest)?;
    let (direction, split) = (Direction::from(a.direction), a.split.split());
    let report = match (&a.baseline, &a.source) {
        (Some(b), _) => {
            let mut src: Box<dyn ImageSource> = match b {
                Baseline::Passthrough => Box::new(Passthrough),
                Baseline::Nearest => Box::new(NearestLr),
            };
            evaluate_dataset(&dataset, src.as_mut(), &metrics, direction, split, 0)?
        }
        (None, Some(dir)) if dir.join(INDEX_FILE).is_file() => {
            let state = checkpoint::load(dir, None)?;
            check_window(&a.window, state.model.image_size, state.model.train_size())?;
            let sliding = a.window.sliding.then(|| (a.window.window.unwrap_or_else(|| state.model.train_size()), a.window.lambda_s));
            let mut src = ModelSource { config: &state.model, generator: &state.generator, params: &state.g_params, seed, sliding };
            evaluate_dataset(&dataset, &mut src, &metrics, direction, split, state.model.input_mode.extra_lr())?
        }
        (None, Some(dir)) => {
            let missing = missing_generated(&dataset, dir, direction, split);
            if !missing.is_empty() {
                return Err(Error::Missing(missing).into());
            }
            evaluate_dataset(&dataset, &mut GeneratedDir(dir.clone()), &metrics, direction, split, 0)?
        }
        (None, None) => return Err(Failure::Usage("give a source directory or --baseline".into())),
    };
    let dump = EvaluateDump {
        manifest: manifest_path(&a.manifest),
        source: a.source.as_deref(),
        baseline: a.baseline,
        direction,
        split,
        metrics: &a.metrics,
        sliding: a.window.sliding,
        window: a.window.window,
        lambda_s: a.window.lambda_s,
        seed,
    };
    write_json(&a.out.join("evaluate.json"), &dump)?;
    report.write(&a.out)?;
    for agg in &report.aggregates {
        let means: Vec<String> = report.metrics.iter().map(|m| format!("{m} {:.4}", agg.mean[m].0)).collect();
        println!("{:<5} rows {:>4} failed {:>3}  {}", agg.split, agg.rows, agg.failed, means.join("  "));
    }
    Ok(())
}
