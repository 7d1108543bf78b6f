//! Run configuration files and the training/generation drivers behind the CLI.

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use chronosynth_core::data::{Direction, PreparedSample};
use chronosynth_core::training::{StepScalars, TrainState};
use chronosynth_core::{ModelConfig, Preset, TrainConfig};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::checkpoint;
use crate::dataset::{write_json, Dataset, SplitName};
use crate::error::{Error, IoContext, Result};
use crate::evaluate::{generated_path, ModelSource};
use crate::imageio::write_png;
use crate::metrics::{metrics_from_names, DEFAULT_METRICS};

pub const SEED_ENV: &str = "CHRONOSYNTH_SEED";

/// Defaults the `model` section is laid over.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Base {
    #[default]
    Paper,
    Desk,
}

impl Base {
    pub fn model(self) -> ModelConfig {
        match self {
            Base::Paper => ModelConfig::paper(),
            Base::Desk => ModelConfig::desk(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub manifest: Option<PathBuf>,
    /// Expected time unit; checked against the manifest when set.
    pub u: Option<f64>,
    /// Expected image side; checked against the manifest when set.
    #[serde(rename = "H")]
    pub image_size: Option<usize>,
    /// Training crop side; overrides the model and preset when set.
    pub patch_size: Option<usize>,
    pub split: SplitName,
}

impl Default for DataSection {
    fn default() -> Self {
        Self { manifest: None, u: None, image_size: None, patch_size: None, split: SplitName::Train }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub direction: Direction,
    pub metrics: Vec<String>,
    pub sliding: bool,
    /// Sliding-window side `S`; defaults to the training crop side.
    #[serde(rename = "S")]
    pub window: Option<usize>,
    pub lambda_s: f64,
    pub seed: u64,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self { direction: Direction::All, metrics: DEFAULT_METRICS.iter().map(|s| s.to_string()).collect(), sliding: false, window: None, lambda_s: 1.0, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub base: Base,
    pub preset: Option<Preset>,
    pub model: ModelConfig,
    pub data: DataSection,
    pub train: TrainConfig,
    pub eval: EvalSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self { base: Base::Paper, preset: None, model: ModelConfig::paper(), data: DataSection::default(), train: TrainConfig::default(), eval: EvalSection::default() }
    }
}

/// Lays `patch` over `base`, reporting keys the base does not have.
fn overlay(section: &str, base: Value, patch: Option<&Value>, bad: &mut Vec<String>) -> Value {
    let (Value::Object(mut obj), Some(patch)) = (base.clone(), patch) else {
        return base;
    };
    match patch {
        Value::Object(p) => {
            for (k, v) in p {
                if obj.contains_key(k) {
                    obj.insert(k.clone(), v.clone());
                } else {
                    bad.push(format!("{section}.{k} is not a known field"));
                }
            }
        }
        _ => bad.push(format!("{section} must be an object")),
    }
    Value::Object(obj)
}

fn section<T: serde::de::DeserializeOwned>(name: &str, v: Value, bad: &mut Vec<String>) -> Option<T> {
    serde_json::from_value(v).map_err(|e| bad.push(format!("{name}: {e}"))).ok()
}

impl RunConfig {
    /// Parses a config file body; every problem is reported.
    pub fn from_json(text: &str) -> std::result::Result<Self, Vec<String>> {
        let root: Value = serde_json::from_str(text).map_err(|e| vec![format!("config is not valid JSON: {e}")])?;
        let Value::Object(root) = root else {
            return Err(vec!["config must be a JSON object".into()]);
        };
        let mut bad = Vec::new();
        for k in root.keys() {
            if !["base", "preset", "model", "data", "train", "eval"].contains(&k.as_str()) {
                bad.push(format!("{k} is not a known section"));
            }
        }
        let base: Base = root.get("base").cloned().and_then(|v| section("base", v, &mut bad)).unwrap_or_default();
        let preset: Option<Preset> = match root.get("preset") {
            None | Some(Value::Null) => None,
            Some(Value::String(s)) => s.parse().map_err(|e: chronosynth_core::Error| bad.push(format!("preset: {e}"))).ok(),
            Some(_) => {
                bad.push("preset must be a string".into());
                None
            }
        };
        let model_v = overlay("model", serde_json::to_value(base.model()).expect("config serializes"), root.get("model"), &mut bad);
        let train_v = overlay("train", serde_json::to_value(TrainConfig::default()).expect("config serializes"), root.get("train"), &mut bad);
        let model: Option<ModelConfig> = section("model", model_v, &mut bad);
        let train: Option<TrainConfig> = section("train", train_v, &mut bad);
        let data: Option<DataSection> = section("data", root.get("data").cloned().unwrap_or(Value::Object(Map::new())), &mut bad);
        let eval: Option<EvalSection> = section("eval", root.get("eval").cloned().unwrap_or(Value::Object(Map::new())), &mut bad);
        match (model, train, data, eval) {
            (Some(model), Some(train), Some(data), Some(eval)) if bad.is_empty() => {
                let mut cfg = RunConfig { base, preset, model, data, train, eval };
                cfg.resolve();
                Ok(cfg)
            }
            _ => Err(bad),
        }
    }

    pub fn load(path: &Path) -> Result<std::result::Result<Self, Vec<String>>> {
        let text = fs::read_to_string(path).at(path)?;
        Ok(Self::from_json(&text))
    }

    /// Applies the preset and the data-section crop size to the model.
    pub fn resolve(&mut self) {
        if let Some(p) = self.preset {
            self.model = p.apply(&self.model);
        }
        if let Some(s) = self.data.patch_size {
            self.model.patch_size = if s == self.model.image_size { None } else { Some(s) };
        }
    }

    pub fn with_preset(mut self, preset: Preset) -> Self {
        self.preset = Some(preset);
        self.resolve();
        self
    }

    /// Replaces training and evaluation seeds with `CHRONOSYNTH_SEED` when set.
    pub fn apply_seed_env(&mut self) -> std::result::Result<(), String> {
        if let Some(seed) = seed_from_env()? {
            self.train.seed = seed;
            self.eval.seed = seed;
        }
        Ok(())
    }

    /// Sliding-window side used at evaluation.
    pub fn eval_window(&self) -> usize {
        self.eval.window.unwrap_or_else(|| self.model.train_size())
    }

    pub fn validate(&self) -> std::result::Result<(), Vec<String>> {
        let mut bad = Vec::new();
        for r in [self.model.validate(), self.train.validate()] {
            match r {
                Err(chronosynth_core::Error::Config(list)) => bad.extend(list),
                Err(e) => bad.push(e.to_string()),
                Ok(()) => {}
            }
        }
        if let Err(list) = metrics_from_names(&self.eval.metrics) {
            bad.extend(list.into_iter().map(|m| format!("eval.metrics: {m}")));
        }
        if !(self.eval.lambda_s > 0.0) {
            bad.push(format!("eval.lambda_s must be > 0, got {}", self.eval.lambda_s));
        }
        let s = self.eval_window();
        let n = self.model.image_size;
        if self.eval.sliding && (s == 0 || s % 4 != 0 || s > n || n % s != 0) {
            bad.push(format!("eval.S must be a multiple of 4 dividing {n}, got {s}"));
        }
        if let Some(u) = self.data.u {
            if !(u > 0.0) {
                bad.push(format!("data.u must be > 0, got {u}"));
            }
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(bad)
        }
    }

    /// Checks the manifest agrees with the model and data section.
    pub fn check_dataset(&self, dataset: &Dataset) -> Result<()> {
        let m = &dataset.manifest;
        let mut bad = Vec::new();
        if m.image_size != self.model.image_size {
            bad.push(format!("manifest H={} but model.image_size={}", m.image_size, self.model.image_size));
        }
        if let Some(h) = self.data.image_size {
            if h != m.image_size {
                bad.push(format!("data.H={h} but manifest H={}", m.image_size));
            }
        }
        if let Some(u) = self.data.u {
            if u != m.u {
                bad.push(format!("data.u={u} but manifest u={}", m.u));
            }
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(chronosynth_core::Error::ConfigMismatch(bad.join("; ")).into())
        }
    }
}

pub fn seed_from_env() -> std::result::Result<Option<u64>, String> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v.trim().parse().map(Some).map_err(|_| format!("{SEED_ENV} must be an unsigned integer, got '{v}'")),
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(e) => Err(format!("{SEED_ENV}: {e}")),
    }
}

/// Every `(t, t')` pair of the chosen split, prepared for the model.
pub fn prepare_samples(dataset: &Dataset, model: &ModelConfig, direction: Direction, split: Option<SplitName>) -> Result<Vec<PreparedSample>> {
    dataset
        .iterate_triplets(direction, split, model.input_mode.extra_lr())
        .map(|s| Ok(PreparedSample::new(&s?, model)?))
        .collect()
}

/// Line-delimited JSON scalar log.
pub struct ScalarLog {
    out: BufWriter<File>,
    start: Instant,
    path: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogLine {
    pub step: u64,
    pub g_loss: f64,
    pub d_loss: f64,
    pub l1: f64,
    pub r1: f64,
    /// Seconds since this process started logging.
    pub wallclock: f64,
}

impl ScalarLog {
    pub fn open(path: &Path, append: bool) -> Result<Self> {
        let file = OpenOptions::new().create(true).write(true).append(append).truncate(!append).open(path).at(path)?;
        Ok(Self { out: BufWriter::new(file), start: Instant::now(), path: path.to_path_buf() })
    }

    pub fn write(&mut self, s: &StepScalars) -> Result<()> {
        let line = LogLine { step: s.step, g_loss: s.g_loss, d_loss: s.d_loss, l1: s.l1, r1: s.r1, wallclock: self.start.elapsed().as_secs_f64() };
        let text = serde_json::to_string(&line).at(&self.path)?;
        writeln!(self.out, "{text}").at(&self.path)?;
        self.out.flush().at(&self.path)
    }
}

pub fn read_log(path: &Path) -> Result<Vec<LogLine>> {
    let text = fs::read_to_string(path).at(path)?;
    text.lines().filter(|l| !l.trim().is_empty()).map(|l| serde_json::from_str(l).at(path)).collect()
}

pub const CONFIG_DUMP: &str = "config.json";
pub const LOG_FILE: &str = "log.jsonl";
pub const FINAL_CHECKPOINT: &str = "checkpoint";

pub fn checkpoint_dir(out: &Path, step: u64) -> PathBuf {
    out.join("checkpoints").join(format!("step_{step:07}"))
}

/// Trains until `cfg.train.total_steps`, writing the config dump, scalar
/// log, periodic checkpoints and a final checkpoint under `out`.
pub fn train_run(cfg: &RunConfig, dataset: &Dataset, out: &Path, resume: Option<&Path>, mut on_step: impl FnMut(&StepScalars)) -> Result<TrainState> {
    cfg.check_dataset(dataset)?;
    let data = prepare_samples(dataset, &cfg.model, Direction::All, Some(cfg.data.split))?;
    if data.is_empty() {
        return Err(Error::Format(format!("the {:?} split has no training pairs", cfg.data.split)));
    }
    let mut state = match resume {
        Some(dir) => {
            let snap = checkpoint::load_snapshot(dir)?;
            if snap.model != cfg.model {
                return Err(chronosynth_core::Error::ConfigMismatch("resumed checkpoint was trained with a different model section".into()).into());
            }
            TrainState::restore(&snap, Some(&cfg.train))?
        }
        None => TrainState::new(&cfg.model, &cfg.train)?,
    };
    fs::create_dir_all(out).at(out)?;
    write_json(&out.join(CONFIG_DUMP), cfg)?;
    let mut log = ScalarLog::open(&out.join(LOG_FILE), resume.is_some())?;
    let every = cfg.train.log_every.max(1);
    while state.step < cfg.train.total_steps {
        let s = state.train_step(&data)?;
        on_step(&s);
        if s.step % every == 0 || state.step == cfg.train.total_steps {
            log.write(&s)?;
        }
        if cfg.train.checkpoint_every > 0 && state.step % cfg.train.checkpoint_every == 0 {
            checkpoint::save(&state, &checkpoint_dir(out, state.step))?;
        }
    }
    checkpoint::save(&state, &out.join(FINAL_CHECKPOINT))?;
    Ok(state)
}

/// Settings of one `generate` invocation, dumped next to its images.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerateConfig {
    pub checkpoint: PathBuf,
    pub manifest: PathBuf,
    pub direction: Direction,
    pub split: Option<SplitName>,
    pub sliding: bool,
    #[serde(rename = "S")]
    pub window: Option<usize>,
    pub lambda_s: f64,
    pub seed: u64,
    pub model: ModelConfig,
}

/// Writes one PNG per admitted pair; returns the written paths.
pub fn generate_run(cfg: &GenerateConfig, state: &TrainState, dataset: &Dataset, out: &Path) -> Result<Vec<PathBuf>> {
    if dataset.manifest.image_size != state.model.image_size {
        return Err(chronosynth_core::Error::ConfigMismatch(format!("manifest H={} but checkpoint H={}", dataset.manifest.image_size, state.model.image_size)).into());
    }
    fs::create_dir_all(out).at(out)?;
    write_json(&out.join("generate.json"), cfg)?;
    let sliding = cfg.sliding.then(|| (cfg.window.unwrap_or_else(|| state.model.train_size()), cfg.lambda_s));
    let source = ModelSource { config: &state.model, generator: &state.generator, params: &state.g_params, seed: cfg.seed, sliding };
    let mut written = Vec::new();
    for sample in dataset.iterate_triplets(cfg.direction, cfg.split, state.model.input_mode.extra_lr()) {
        let sample = sample?;
        let img = source.generate_signed(&sample)?;
        let path = generated_path(out, &sample.location_id, sample.t, sample.t_ref);
        write_png(&path, &img)?;
        written.push(path);
    }
    Ok(written)
}
