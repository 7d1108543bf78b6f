//! Checkpoint directories: one little-endian `float32` file per tensor and an
//! `index.json` holding names, shapes, configs, counters and RNG state.

use std::fs;
use std::path::Path;

use chronosynth_core::tensor::Tensor;
use chronosynth_core::training::{RngState, Snapshot, TrainState};
use chronosynth_core::{ModelConfig, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::{Error, IoContext, Result};

pub const INDEX_FILE: &str = "index.json";
pub const FORMAT: &str = "chronosynth-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    pub file: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RngEntry {
    /// 32-byte key as hex.
    pub seed: String,
    pub stream: u64,
    /// `u128` kept as a decimal string for JSON readers.
    pub word_pos: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Index {
    pub format: String,
    pub version: u32,
    pub step: u64,
    pub g_opt_steps: u64,
    pub d_opt_steps: u64,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub rng: RngEntry,
    pub tensors: Vec<TensorEntry>,
}

pub fn save_snapshot(snapshot: &Snapshot, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).at(dir)?;
    let mut tensors = Vec::with_capacity(snapshot.tensors.len());
    for (name, t) in &snapshot.tensors {
        let file = format!("{name}.bin");
        let bytes: Vec<u8> = t.data().iter().flat_map(|v| v.to_le_bytes()).collect();
        let path = dir.join(&file);
        fs::write(&path, bytes).at(&path)?;
        tensors.push(TensorEntry { name: name.clone(), shape: t.shape().to_vec(), dtype: "float32".into(), file });
    }
    let index = Index {
        format: FORMAT.into(),
        version: VERSION,
        step: snapshot.step,
        g_opt_steps: snapshot.g_opt_steps,
        d_opt_steps: snapshot.d_opt_steps,
        model: snapshot.model.clone(),
        train: snapshot.train.clone(),
        rng: RngEntry { seed: hex::encode(snapshot.rng.seed), stream: snapshot.rng.stream, word_pos: snapshot.rng.word_pos.to_string() },
        tensors,
    };
    crate::dataset::write_json(&dir.join(INDEX_FILE), &index)
}

pub fn read_index(dir: &Path) -> Result<Index> {
    let path = dir.join(INDEX_FILE);
    let text = fs::read_to_string(&path).at(&path)?;
    let value: serde_json::Value = serde_json::from_str(&text).at(&path)?;
    match (value.get("format").and_then(|v| v.as_str()), value.get("version").and_then(|v| v.as_u64())) {
        (Some(FORMAT), Some(v)) if v == VERSION as u64 => {}
        (Some(FORMAT), v) => return Err(Error::Format(format!("{}: checkpoint version {v:?}, this build reads {VERSION}", path.display()))),
        _ => return Err(Error::Format(format!("{}: not a checkpoint index", path.display()))),
    }
    serde_json::from_value(value).map_err(|e| Error::Format(format!("{}: corrupt checkpoint index: {e}", path.display())))
}

pub fn load_snapshot(dir: &Path) -> Result<Snapshot> {
    let index = read_index(dir)?;
    let corrupt = |msg: String| Error::Format(format!("{}: {msg}", dir.display()));
    let seed: [u8; 32] = hex::decode(&index.rng.seed).ok().and_then(|b| b.try_into().ok()).ok_or_else(|| corrupt("bad RNG seed".into()))?;
    let word_pos: u128 = index.rng.word_pos.parse().map_err(|_| corrupt("bad RNG position".into()))?;
    let mut tensors = Vec::with_capacity(index.tensors.len());
    for e in &index.tensors {
        if e.dtype != "float32" {
            return Err(corrupt(format!("tensor {} has dtype {}", e.name, e.dtype)));
        }
        if e.file.contains("..") || Path::new(&e.file).is_absolute() {
            return Err(corrupt(format!("tensor {} points outside the checkpoint", e.name)));
        }
        let path = dir.join(&e.file);
        let bytes = fs::read(&path).at(&path)?;
        let n: usize = e.shape.iter().product();
        if bytes.len() != 4 * n {
            return Err(corrupt(format!("{} holds {} bytes, shape {:?} needs {}", e.file, bytes.len(), e.shape, 4 * n)));
        }
        let data = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        tensors.push((e.name.clone(), Tensor::from_vec(&e.shape, data)));
    }
    Ok(Snapshot {
        model: index.model,
        train: index.train,
        step: index.step,
        rng: RngState { seed, stream: index.rng.stream, word_pos },
        g_opt_steps: index.g_opt_steps,
        d_opt_steps: index.d_opt_steps,
        tensors,
    })
}

pub fn save(state: &TrainState, dir: &Path) -> Result<()> {
    save_snapshot(&state.snapshot(), dir)
}

/// Restores a training state; `train` overrides the stored schedule.
pub fn load(dir: &Path, train: Option<&TrainConfig>) -> Result<TrainState> {
    Ok(TrainState::restore(&load_snapshot(dir)?, train)?)
}

/// Restores a state and checks it against the model the caller expects.
pub fn load_expecting(dir: &Path, model: &ModelConfig) -> Result<TrainState> {
    let snapshot = load_snapshot(dir)?;
    if &snapshot.model != model {
        return Err(chronosynth_core::Error::ConfigMismatch(describe_mismatch(&snapshot.model, model)).into());
    }
    Ok(TrainState::restore(&snapshot, None)?)
}

fn describe_mismatch(stored: &ModelConfig, wanted: &ModelConfig) -> String {
    let (a, b) = (serde_json::to_value(stored).unwrap_or_default(), serde_json::to_value(wanted).unwrap_or_default());
    let mut diffs = Vec::new();
    if let (Some(a), Some(b)) = (a.as_object(), b.as_object()) {
        for (k, va) in a {
            if b.get(k) != Some(va) {
                diffs.push(format!("{k}: checkpoint {va}, requested {}", b.get(k).cloned().unwrap_or_default()));
            }
        }
    }
    format!("checkpoint model differs: {}", diffs.join(", "))
}
