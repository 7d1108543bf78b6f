//! Producing `HR(t)` estimates for every pair of a dataset and scoring them.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chronosynth_core::data::{resample_nearest, Direction, PreparedSample, RasterImage, TripletSample};
use chronosynth_core::generator::Generator;
use chronosynth_core::inference::{generate_full, sliding_window_generate, GeneratorSource, SlidingWindowPlan};
use chronosynth_core::nn::ParamStore;
use chronosynth_core::ModelConfig;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::{time_label, Dataset, SplitName};
use crate::error::{Error, Result};
use crate::imageio::{quantized, read_png};
use crate::metrics::Metric;
use crate::report::{direction_label, MetricReport, MetricRow, Score};

/// Something that estimates `HR(t)` for a triplet; outputs are unit range.
pub trait ImageSource {
    fn produce(&mut self, sample: &TripletSample) -> Result<RasterImage>;
}

/// Returns the ground truth itself.
pub struct Passthrough;

impl ImageSource for Passthrough {
    fn produce(&mut self, sample: &TripletSample) -> Result<RasterImage> {
        sample.hr_gt.clone().ok_or_else(|| missing_gt(sample))
    }
}

/// Nearest-neighbour upsampling of `LR(t)`.
pub struct NearestLr;

impl ImageSource for NearestLr {
    fn produce(&mut self, sample: &TripletSample) -> Result<RasterImage> {
        Ok(resample_nearest(&sample.lr_t, sample.hr_ref.height(), sample.hr_ref.width())?)
    }
}

/// File a generated image for `(location, t, t')` lives at.
pub fn generated_path(dir: &Path, location_id: &str, t: f64, t_ref: f64) -> PathBuf {
    dir.join(location_id).join(format!("gen_t{}_ref{}.png", time_label(t), time_label(t_ref)))
}

/// Reads previously generated PNGs.
pub struct GeneratedDir(pub PathBuf);

impl ImageSource for GeneratedDir {
    fn produce(&mut self, sample: &TripletSample) -> Result<RasterImage> {
        read_png(&generated_path(&self.0, &sample.location_id, sample.t, sample.t_ref))
    }
}

/// Stable per-pair RNG stream so a pair's noise does not depend on which
/// other pairs are generated.
pub fn pair_stream(location_id: &str, t: f64, t_ref: f64) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in location_id.bytes().chain(t.to_le_bytes()).chain(t_ref.to_le_bytes()) {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Runs a trained generator, full-grid or sliding-window.
pub struct ModelSource<'a> {
    pub config: &'a ModelConfig,
    pub generator: &'a Generator,
    pub params: &'a ParamStore<f32>,
    pub seed: u64,
    /// `(S, lambda_s)` selects sliding-window generation.
    pub sliding: Option<(usize, f64)>,
}

impl ModelSource<'_> {
    /// Signed output before PNG quantization.
    pub fn generate_signed(&self, sample: &TripletSample) -> Result<RasterImage> {
        let prepared = PreparedSample::new(sample, self.config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(pair_stream(&sample.location_id, sample.t, sample.t_ref));
        let z = self.generator.sample_z::<f32, _>(&mut rng, 1);
        let z = z.reshape(&[z.numel()]);
        Ok(match self.sliding {
            None => generate_full(self.generator, self.params, &prepared, &z)?,
            Some((s, lambda)) => {
                let n = self.config.image_size;
                let plan = SlidingWindowPlan::new(n, n, s, lambda)?;
                let mut src = GeneratorSource { generator: self.generator, params: self.params, sample: &prepared };
                sliding_window_generate(&mut src, &plan, &z)?
            }
        })
    }
}

impl ImageSource for ModelSource<'_> {
    /// Quantized to 8 bits so scores match those of the written PNGs.
    fn produce(&mut self, sample: &TripletSample) -> Result<RasterImage> {
        Ok(quantized(&self.generate_signed(sample)?))
    }
}

fn missing_gt(sample: &TripletSample) -> Error {
    Error::Format(format!("{} at t={} has no ground truth", sample.location_id, sample.t))
}

/// Scores every admitted pair. Metric failures are kept as row errors;
/// missing ground truth or unreadable inputs abort.
pub fn evaluate_dataset(
    dataset: &Dataset,
    source: &mut dyn ImageSource,
    metrics: &[Box<dyn Metric>],
    direction: Direction,
    split: Option<SplitName>,
    extra_lr: usize,
) -> Result<MetricReport> {
    let mut rows = Vec::new();
    for sample in dataset.iterate_triplets(direction, split, extra_lr) {
        let sample = sample?;
        let gt = sample.hr_gt.as_ref().ok_or_else(|| missing_gt(&sample))?;
        let estimate = source.produce(&sample)?;
        let mut values = BTreeMap::new();
        let mut errors = Vec::new();
        for m in metrics {
            match m.compute(&estimate, gt) {
                Ok(v) => {
                    values.insert(m.name().to_string(), Score(v));
                }
                Err(e) => errors.push(format!("{}: {e}", m.name())),
            }
        }
        rows.push(MetricRow {
            location_id: sample.location_id.clone(),
            t: sample.t,
            t_ref: sample.t_ref,
            direction: direction_label(sample.t, sample.t_ref).to_string(),
            values,
            error: if errors.is_empty() { None } else { Some(errors.join("; ")) },
        });
    }
    Ok(MetricReport::new(metrics.iter().map(|m| m.name().to_string()).collect(), rows))
}

/// Paths of generated images that `evaluate_dataset` would need but that
/// do not exist.
pub fn missing_generated(dataset: &Dataset, dir: &Path, direction: Direction, split: Option<SplitName>) -> Vec<String> {
    let mut out = Vec::new();
    for loc in dataset.manifest.locations(split) {
        let times = loc.times();
        for (i, j) in chronosynth_core::data::ordered_pairs(&times, direction) {
            if loc.records[j].hr.is_none() {
                continue;
            }
            let p = generated_path(dir, loc.id, times[i], times[j]);
            if !p.is_file() {
                out.push(p.display().to_string());
            }
        }
    }
    out
}
