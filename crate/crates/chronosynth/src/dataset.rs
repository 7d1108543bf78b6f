//! On-disk triplet datasets: `<root>/<location_id>/{hr_<t>.png, lr_<t>.png}`
//! plus `manifest.json`.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use chronosynth_core::data::synthetic::{synthesize_location, SyntheticConfig, TIME_UNIT};
use chronosynth_core::data::{ordered_pairs, Direction, RasterImage, TripletSample};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, IoContext, Result};
use crate::imageio::{read_png, write_png};

pub const MANIFEST_FILE: &str = "manifest.json";

/// One timestamp of one location. Paths are relative to the manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub location_id: String,
    /// Raw time; the models see `t / u`.
    pub t: f64,
    pub lr: String,
    /// HR frame; required for use as a reference or as ground truth.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hr: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitName {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    /// Time unit.
    pub u: f64,
    /// HR side length.
    #[serde(rename = "H")]
    pub image_size: usize,
    pub records: Vec<Record>,
    pub split: Split,
    /// Generator settings when the dataset is synthetic.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticConfig>,
}

/// Timestamps of one location, sorted by time.
#[derive(Clone, Debug)]
pub struct Location<'a> {
    pub id: &'a str,
    pub records: Vec<&'a Record>,
}

impl<'a> Location<'a> {
    pub fn times(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.t).collect()
    }
}

impl Manifest {
    /// Structural checks that need no file access.
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if !(self.u > 0.0) {
            bad.push(format!("time unit u must be positive, got {}", self.u));
        }
        if self.image_size == 0 {
            bad.push("H must be positive".to_string());
        }
        let mut seen = BTreeSet::new();
        for r in &self.records {
            if !r.t.is_finite() {
                bad.push(format!("{}: non-finite time", r.location_id));
            }
            if !seen.insert((r.location_id.as_str(), r.t.to_bits())) {
                bad.push(format!("duplicate record for location {} at t={}", r.location_id, r.t));
            }
        }
        let train: BTreeSet<&str> = self.split.train.iter().map(String::as_str).collect();
        let test: BTreeSet<&str> = self.split.test.iter().map(String::as_str).collect();
        for shared in train.intersection(&test) {
            bad.push(format!("location {shared} is in both train and test splits"));
        }
        let ids: BTreeSet<&str> = self.records.iter().map(|r| r.location_id.as_str()).collect();
        for id in train.union(&test) {
            if !ids.contains(id) {
                bad.push(format!("split names unknown location {id}"));
            }
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Format(format!("invalid manifest: {}", bad.join("; "))))
        }
    }

    /// Locations in id order, optionally restricted to one split.
    pub fn locations(&self, split: Option<SplitName>) -> Vec<Location<'_>> {
        let allowed: Option<BTreeSet<&str>> = split.map(|s| {
            let ids = match s {
                SplitName::Train => &self.split.train,
                SplitName::Test => &self.split.test,
            };
            ids.iter().map(String::as_str).collect()
        });
        let mut by_id: BTreeMap<&str, Vec<&Record>> = BTreeMap::new();
        for r in &self.records {
            if allowed.as_ref().is_none_or(|a| a.contains(r.location_id.as_str())) {
                by_id.entry(&r.location_id).or_default().push(r);
            }
        }
        by_id
            .into_iter()
            .map(|(id, mut records)| {
                records.sort_by(|a, b| a.t.total_cmp(&b.t));
                Location { id, records }
            })
            .collect()
    }

    /// Number of `(target, reference)` pairs `iterate_triplets` will yield.
    pub fn pair_count(&self, direction: Direction, split: Option<SplitName>) -> usize {
        self.locations(split).iter().map(|l| pairs_of(l, direction).len()).sum()
    }
}

fn pairs_of(loc: &Location<'_>, direction: Direction) -> Vec<(usize, usize)> {
    ordered_pairs(&loc.times(), direction).into_iter().filter(|&(_, r)| loc.records[r].hr.is_some()).collect()
}

/// A manifest together with the directory its paths are relative to.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: Manifest,
}

/// `manifest.json` inside `path` when `path` is a directory.
pub fn manifest_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(MANIFEST_FILE)
    } else {
        path.to_path_buf()
    }
}

impl Dataset {
    /// Reads and validates a manifest and checks that every raster exists.
    pub fn open(path: &Path) -> Result<Self> {
        let path = manifest_path(path);
        let text = fs::read_to_string(&path).at(&path)?;
        let manifest: Manifest = serde_json::from_str(&text).at(&path)?;
        manifest.validate()?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let missing: Vec<String> = manifest
            .records
            .iter()
            .flat_map(|r| std::iter::once(&r.lr).chain(r.hr.as_ref()))
            .map(|f| root.join(f))
            .filter(|p| !p.is_file())
            .map(|p| p.display().to_string())
            .collect();
        if !missing.is_empty() {
            return Err(Error::Missing(missing));
        }
        Ok(Self { root, manifest })
    }

    pub fn load(&self, file: &str) -> Result<RasterImage> {
        let img = read_png(&self.root.join(file))?;
        Ok(img)
    }

    fn load_hr(&self, r: &Record) -> Result<RasterImage> {
        let file = r.hr.as_ref().ok_or_else(|| Error::Format(format!("{} at t={} has no HR frame", r.location_id, r.t)))?;
        let img = self.load(file)?;
        let n = self.manifest.image_size;
        if img.height() != n || img.width() != n {
            return Err(Error::Format(format!("{file} is {}x{}, manifest says H={n}", img.height(), img.width())));
        }
        Ok(img)
    }

    /// Every ordered `(t, t')` pair admitted by `direction`, per location in
    /// id order. `extra_lr` further LR frames are attached to each sample
    /// (nearest other timestamps; the target frame repeats when there are
    /// too few).
    pub fn iterate_triplets(&self, direction: Direction, split: Option<SplitName>, extra_lr: usize) -> impl Iterator<Item = Result<TripletSample>> + '_ {
        let u = self.manifest.u;
        self.manifest.locations(split).into_iter().flat_map(move |loc| {
            let pairs = pairs_of(&loc, direction);
            pairs.into_iter().map(move |(i, j)| {
                let (target, reference) = (loc.records[i], loc.records[j]);
                let lr = self.load(&target.lr)?;
                let hr_ref = self.load_hr(reference)?;
                let hr_gt = target.hr.as_ref().map(|_| self.load_hr(target)).transpose()?;
                let sample = TripletSample::new(loc.id.to_string(), lr, hr_ref, hr_gt, target.t, reference.t, u)?;
                if extra_lr == 0 {
                    return Ok(sample);
                }
                let extra = extra_lr_indices(&loc.times(), i, extra_lr)
                    .into_iter()
                    .map(|k| self.load(&loc.records[k].lr))
                    .collect::<Result<Vec<_>>>()?;
                Ok(sample.with_extra_lr(extra))
            })
        })
    }
}

/// The `k` timestamps closest to `times[target]` (excluding it), earlier
/// first on ties, padded with `target` itself.
pub fn extra_lr_indices(times: &[f64], target: usize, k: usize) -> Vec<usize> {
    let mut others: Vec<usize> = (0..times.len()).filter(|&i| i != target).collect();
    others.sort_by(|&a, &b| {
        let (da, db) = ((times[a] - times[target]).abs(), (times[b] - times[target]).abs());
        da.total_cmp(&db).then(times[a].total_cmp(&times[b]))
    });
    others.truncate(k);
    others.resize(k, target);
    others
}

/// File-name form of a raw time: integers without a fraction.
pub fn time_label(t: f64) -> String {
    if t.fract() == 0.0 && t.abs() < 1e15 {
        format!("{}", t as i64)
    } else {
        format!("{t}")
    }
}

/// Deterministic location split; `test_fraction` of the ids (at least one
/// when there are two or more locations) go to the test set.
pub fn split_locations(ids: &[String], test_fraction: f64, seed: u64) -> Split {
    let mut order: Vec<&String> = ids.iter().collect();
    order.sort();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0x5b17);
    order.shuffle(&mut rng);
    let mut n_test = (ids.len() as f64 * test_fraction).round() as usize;
    if test_fraction > 0.0 && ids.len() >= 2 {
        n_test = n_test.clamp(1, ids.len() - 1);
    }
    let mut test: Vec<String> = order[..n_test].iter().map(|s| s.to_string()).collect();
    let mut train: Vec<String> = order[n_test..].iter().map(|s| s.to_string()).collect();
    test.sort();
    train.sort();
    Split { train, test }
}

/// Renders a synthetic dataset into `out` and writes its manifest.
pub fn write_synthetic(cfg: &SyntheticConfig, test_fraction: f64, out: &Path) -> Result<Manifest> {
    cfg.validate()?;
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(chronosynth_core::Error::InvalidArgument(format!("test fraction must lie in [0, 1), got {test_fraction}")).into());
    }
    fs::create_dir_all(out).at(out)?;
    let mut records = Vec::new();
    let mut ids = Vec::new();
    for index in 0..cfg.locations {
        let loc = synthesize_location(cfg, index)?;
        for (k, &t) in loc.raw_times.iter().enumerate() {
            let label = time_label(t);
            let hr = format!("{}/hr_{label}.png", loc.id);
            let lr = format!("{}/lr_{label}.png", loc.id);
            write_png(&out.join(&hr), &loc.hr[k])?;
            write_png(&out.join(&lr), &loc.lr[k])?;
            records.push(Record { location_id: loc.id.clone(), t, lr, hr: Some(hr) });
        }
        ids.push(loc.id);
    }
    let manifest = Manifest { u: TIME_UNIT, image_size: cfg.size, records, split: split_locations(&ids, test_fraction, cfg.seed), synthetic: Some(cfg.clone()) };
    write_json(&out.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).at(path)?;
    text.push('\n');
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).at(dir)?;
    }
    fs::write(path, text).at(path)
}
