use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape_err, Result};
use crate::real::Real;
use crate::tensor::Tensor;

/// Declared value range of a raster.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueRange {
    /// `[0, 1]`, the on-disk and evaluation range.
    Unit,
    /// `[-1, 1]`, the model-side range.
    Signed,
}

impl ValueRange {
    pub fn bounds(self) -> (f32, f32) {
        match self {
            ValueRange::Unit => (0.0, 1.0),
            ValueRange::Signed => (-1.0, 1.0),
        }
    }
}

/// `C x H x W` image stored channel-major.
#[derive(Clone, Debug, PartialEq)]
pub struct RasterImage {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
    range: ValueRange,
}

impl RasterImage {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>, range: ValueRange) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(invalid!("raster dimensions must be positive, got {channels}x{height}x{width}"));
        }
        if data.len() != channels * height * width {
            return Err(shape_err!("raster {channels}x{height}x{width} needs {} values, got {}", channels * height * width, data.len()));
        }
        let (lo, hi) = range.bounds();
        if let Some(v) = data.iter().find(|v| !(**v >= lo && **v <= hi)) {
            return Err(invalid!("value {v} outside {range:?} range"));
        }
        Ok(Self { channels, height, width, data, range })
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f32, range: ValueRange) -> Result<Self> {
        Self::new(channels, height, width, vec![value; channels * height * width], range)
    }

    /// Builds from values that may drift slightly outside the range; clamps.
    pub fn from_clamped(channels: usize, height: usize, width: usize, mut data: Vec<f32>, range: ValueRange) -> Result<Self> {
        let (lo, hi) = range.bounds();
        for v in data.iter_mut() {
            *v = if v.is_nan() { lo } else { v.clamp(lo, hi) };
        }
        Self::new(channels, height, width, data, range)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn range(&self) -> ValueRange {
        self.range
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    #[inline]
    pub fn get(&self, c: usize, x: usize, y: usize) -> f32 {
        self.data[(c * self.height + x) * self.width + y]
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    /// Linear map `[0,1] -> [-1,1]`; identity on signed rasters.
    pub fn to_signed(&self) -> Self {
        match self.range {
            ValueRange::Signed => self.clone(),
            ValueRange::Unit => Self { data: self.data.iter().map(|v| (2.0 * v - 1.0).clamp(-1.0, 1.0)).collect(), range: ValueRange::Signed, ..*self },
        }
    }

    /// Linear map `[-1,1] -> [0,1]`; identity on unit rasters.
    pub fn to_unit(&self) -> Self {
        match self.range {
            ValueRange::Unit => self.clone(),
            ValueRange::Signed => Self { data: self.data.iter().map(|v| ((v + 1.0) * 0.5).clamp(0.0, 1.0)).collect(), range: ValueRange::Unit, ..*self },
        }
    }

    /// Copies `height x width` starting at row `top`, column `left`.
    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Self> {
        if top + height > self.height || left + width > self.width || height == 0 || width == 0 {
            return Err(invalid!("crop {height}x{width} at ({top}, {left}) exceeds {}x{}", self.height, self.width));
        }
        let mut data = Vec::with_capacity(self.channels * height * width);
        for c in 0..self.channels {
            for x in top..top + height {
                let row = (c * self.height + x) * self.width;
                data.extend_from_slice(&self.data[row + left..row + left + width]);
            }
        }
        Ok(Self { channels: self.channels, height, width, data, range: self.range })
    }

    /// Writes `patch` into `self` with its top-left corner at (`top`, `left`).
    pub fn paste(&mut self, patch: &Self, top: usize, left: usize) -> Result<()> {
        if patch.channels != self.channels || top + patch.height > self.height || left + patch.width > self.width {
            return Err(shape_err!("cannot paste {:?} at ({top}, {left}) into {:?}", patch.dims(), self.dims()));
        }
        for c in 0..self.channels {
            for x in 0..patch.height {
                let dst = (c * self.height + top + x) * self.width + left;
                let src = (c * patch.height + x) * patch.width;
                self.data[dst..dst + patch.width].copy_from_slice(&patch.data[src..src + patch.width]);
            }
        }
        Ok(())
    }

    /// Channel stack of rasters sharing height, width and range.
    pub fn stack(parts: &[&Self]) -> Result<Self> {
        let first = parts.first().ok_or_else(|| invalid!("cannot stack zero rasters"))?;
        let mut data = Vec::new();
        let mut channels = 0;
        for p in parts {
            if (p.height, p.width, p.range) != (first.height, first.width, first.range) {
                return Err(shape_err!("stack mismatch: {:?} vs {:?}", p.dims(), first.dims()));
            }
            data.extend_from_slice(&p.data);
            channels += p.channels;
        }
        Self::new(channels, first.height, first.width, data, first.range)
    }

    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        Tensor::from_vec(&[self.channels, self.height, self.width], self.data.iter().map(|&v| T::from_f64(v as f64)).collect())
    }

    /// Converts `[C, H, W]` (or `[1, C, H, W]`) model output, clamping to `range`.
    pub fn from_tensor<T: Real>(t: &Tensor<T>, range: ValueRange) -> Result<Self> {
        let s = t.shape();
        let (c, h, w) = match s.len() {
            3 => (s[0], s[1], s[2]),
            4 if s[0] == 1 => (s[1], s[2], s[3]),
            _ => return Err(shape_err!("expected [C, H, W] tensor, got {s:?}")),
        };
        Self::from_clamped(c, h, w, t.data().iter().map(|v| v.as_f64() as f32).collect(), range)
    }
}
