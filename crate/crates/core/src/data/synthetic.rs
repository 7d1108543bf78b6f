//! Deterministic synthetic time series: a smooth background with
//! rectangular "buildings" and small square "pools" that appear over time.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{RasterImage, ValueRange};
use crate::error::{invalid, Result};

/// Spacing of raw timestamps; together with `TIME_UNIT` gives `t/u = 0, 1, 2, ...`.
pub const TIME_STEP: f64 = 2.0;
pub const TIME_UNIT: f64 = 2.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub seed: u64,
    pub locations: usize,
    pub size: usize,
    pub factor: usize,
    pub timestamps: usize,
    /// Standard deviation of additive LR noise, in unit range.
    pub lr_noise: f32,
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.size < 8 {
            return Err(invalid!("synthetic image size must be at least 8, got {}", self.size));
        }
        if self.factor == 0 || self.size % self.factor != 0 {
            return Err(invalid!("LR factor {} must divide image size {}", self.factor, self.size));
        }
        if self.timestamps < 2 {
            return Err(invalid!("need at least 2 timestamps, got {}", self.timestamps));
        }
        if self.locations == 0 {
            return Err(invalid!("need at least one location"));
        }
        if !(self.lr_noise >= 0.0) {
            return Err(invalid!("LR noise must be non-negative"));
        }
        Ok(())
    }

    pub fn raw_times(&self) -> Vec<f64> {
        (0..self.timestamps).map(|i| i as f64 * TIME_STEP).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectKind {
    Building,
    Pool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub kind: ObjectKind,
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
    pub color: [f32; 3],
    /// Raw time from which the object is visible.
    pub appears_at: f64,
}

impl SceneObject {
    pub fn visible_at(&self, t_raw: f64) -> bool {
        self.appears_at <= t_raw
    }

    fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.top && x < self.top + self.height && y >= self.left && y < self.left + self.width
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticLocation {
    pub id: String,
    pub raw_times: Vec<f64>,
    pub hr: Vec<RasterImage>,
    pub lr: Vec<RasterImage>,
    pub objects: Vec<SceneObject>,
    /// Global brightness offset applied at each timestamp.
    pub illumination: Vec<f32>,
}

pub fn location_id(index: usize) -> String {
    format!("loc_{index:04}")
}

/// Renders location `index`; independent of how many locations are drawn.
pub fn synthesize_location(cfg: &SyntheticConfig, index: usize) -> Result<SyntheticLocation> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index as u64);
    let n = cfg.size;
    let times = cfg.raw_times();

    let background = draw_background(&mut rng, n);
    let objects = draw_objects(&mut rng, n, &times);
    // Global illumination drift per timestamp.
    let drift: Vec<f32> = times.iter().map(|_| rng.random_range(-0.05f32..0.05)).collect();

    let mut hr = Vec::with_capacity(times.len());
    let mut lr = Vec::with_capacity(times.len());
    for (k, &t) in times.iter().enumerate() {
        let frame = render(&background, &objects, n, t, drift[k]);
        let frame = RasterImage::new(3, n, n, frame, ValueRange::Unit)?;
        let mut low = block_mean(&frame, cfg.factor)?.into_data();
        if cfg.lr_noise > 0.0 {
            for v in low.iter_mut() {
                *v += cfg.lr_noise * rng.sample::<f32, _>(StandardNormal);
            }
        }
        let m = n / cfg.factor;
        lr.push(RasterImage::from_clamped(3, m, m, low, ValueRange::Unit)?);
        hr.push(frame);
    }
    Ok(SyntheticLocation { id: location_id(index), raw_times: times, hr, lr, objects, illumination: drift })
}

/// Average over non-overlapping `factor x factor` blocks.
pub fn block_mean(img: &RasterImage, factor: usize) -> Result<RasterImage> {
    let (c, h, w) = img.dims();
    if factor == 0 || h % factor != 0 || w % factor != 0 {
        return Err(invalid!("block factor {factor} must divide {h}x{w}"));
    }
    let (lh, lw) = (h / factor, w / factor);
    let inv = 1.0 / (factor * factor) as f64;
    let mut out = vec![0.0f32; c * lh * lw];
    for ch in 0..c {
        let plane = img.plane(ch);
        for bx in 0..lh {
            for by in 0..lw {
                let mut acc = 0.0f64;
                for x in bx * factor..(bx + 1) * factor {
                    for y in by * factor..(by + 1) * factor {
                        acc += plane[x * w + y] as f64;
                    }
                }
                out[(ch * lh + bx) * lw + by] = (acc * inv) as f32;
            }
        }
    }
    RasterImage::from_clamped(c, lh, lw, out, img.range())
}

fn draw_background(rng: &mut ChaCha8Rng, n: usize) -> Vec<f32> {
    let base = [rng.random_range(0.25..0.45), rng.random_range(0.35..0.55), rng.random_range(0.2..0.35)];
    let waves: Vec<(f64, f64, f64, f64)> = (0..3)
        .map(|_| {
            let fx = rng.random_range(0.5..2.0) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            let fy = rng.random_range(0.5..2.0);
            (fx, fy, rng.random_range(0.0..2.0 * PI), rng.random_range(0.02..0.06))
        })
        .collect();
    // A static road band, horizontal or vertical.
    let road_vertical = rng.random_bool(0.5);
    let road_width = (n / 16).max(2);
    let road_at = rng.random_range(0..n - road_width);

    let mut out = vec![0.0f32; 3 * n * n];
    for x in 0..n {
        for y in 0..n {
            let (u, v) = (x as f64 / n as f64, y as f64 / n as f64);
            let tex: f64 = waves.iter().map(|&(fx, fy, ph, a)| a * libm::sin(2.0 * PI * (fx * u + fy * v) + ph)).sum();
            let along = if road_vertical { y } else { x };
            let on_road = along >= road_at && along < road_at + road_width;
            for ch in 0..3 {
                let val = if on_road { 0.55 + 0.3 * tex } else { base[ch] + tex * (1.0 + 0.3 * ch as f64) };
                out[(ch * n + x) * n + y] = val as f32;
            }
        }
    }
    out
}

fn draw_objects(rng: &mut ChaCha8Rng, n: usize, times: &[f64]) -> Vec<SceneObject> {
    const ROOFS: [[f32; 3]; 4] = [[0.78, 0.76, 0.72], [0.62, 0.28, 0.22], [0.45, 0.40, 0.38], [0.85, 0.62, 0.45]];
    let mut objects = Vec::new();
    let appear = |rng: &mut ChaCha8Rng| -> f64 {
        if rng.random_bool(0.4) {
            times[0]
        } else {
            times[rng.random_range(1..times.len())]
        }
    };
    let buildings = rng.random_range(3..=6);
    for _ in 0..buildings {
        let (lo, hi) = ((n / 10).max(2), (n / 5).max(3));
        let height = rng.random_range(lo..=hi);
        let width = rng.random_range(lo..=hi);
        let top = rng.random_range(0..=n - height);
        let left = rng.random_range(0..=n - width);
        let color = ROOFS[rng.random_range(0..ROOFS.len())];
        let appears_at = appear(rng);
        objects.push(SceneObject { kind: ObjectKind::Building, top, left, height, width, color, appears_at });
    }
    let pools = rng.random_range(1..=3);
    for _ in 0..pools {
        let side = rng.random_range((n / 20).max(1)..=(n / 12).max(2));
        let top = rng.random_range(0..=n - side);
        let left = rng.random_range(0..=n - side);
        let appears_at = appear(rng);
        objects.push(SceneObject { kind: ObjectKind::Pool, top, left, height: side, width: side, color: [0.12, 0.55, 0.88], appears_at });
    }
    objects
}

fn render(background: &[f32], objects: &[SceneObject], n: usize, t_raw: f64, drift: f32) -> Vec<f32> {
    let mut out: Vec<f32> = background.iter().map(|v| v + drift).collect();
    for obj in objects.iter().filter(|o| o.visible_at(t_raw)) {
        for x in obj.top..obj.top + obj.height {
            for y in obj.left..obj.left + obj.width {
                debug_assert!(obj.contains(x, y));
                // Darker outline so the footprint survives block averaging.
                let edge = x == obj.top || y == obj.left || x + 1 == obj.top + obj.height || y + 1 == obj.left + obj.width;
                for ch in 0..3 {
                    let v = obj.color[ch] + drift;
                    out[(ch * n + x) * n + y] = if edge && obj.kind == ObjectKind::Building { v * 0.8 } else { v };
                }
            }
        }
    }
    // Stored as 8-bit, so keep values on the 1/255 grid.
    for v in out.iter_mut() {
        *v = libm::roundf(v.clamp(0.0, 1.0) * 255.0) / 255.0;
    }
    out
}
