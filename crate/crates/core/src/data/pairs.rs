use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::RasterImage;
use crate::error::{invalid, shape_err, Result};

/// Which reference timestamps may be paired with a target.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// Reconstruct the past from a later reference (`t' > t`).
    Past,
    /// Predict forward from an earlier reference (`t' < t`).
    Future,
    /// Any `t' != t`.
    #[default]
    All,
}

impl Direction {
    pub fn admits(self, t: f64, t_ref: f64) -> bool {
        match self {
            Direction::Past => t_ref > t,
            Direction::Future => t_ref < t,
            Direction::All => t_ref != t,
        }
    }
}

/// All `(target, reference)` index pairs admitted by `direction`.
pub fn ordered_pairs(times: &[f64], direction: Direction) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for (i, &t) in times.iter().enumerate() {
        for (j, &t_ref) in times.iter().enumerate() {
            if i != j && direction.admits(t, t_ref) {
                out.push((i, j));
            }
        }
    }
    out
}

/// One training or evaluation example.
#[derive(Clone, Debug)]
pub struct TripletSample {
    pub location_id: String,
    pub lr_t: RasterImage,
    pub hr_ref: RasterImage,
    pub hr_gt: Option<RasterImage>,
    /// Raw target time.
    pub t: f64,
    /// Raw reference time.
    pub t_ref: f64,
    /// Time unit `u`; the model sees `t / u`.
    pub time_unit: f64,
    /// Extra LR frames for multi-LR input.
    pub extra_lr: Vec<RasterImage>,
}

impl TripletSample {
    pub fn new(
        location_id: String,
        lr_t: RasterImage,
        hr_ref: RasterImage,
        hr_gt: Option<RasterImage>,
        t: f64,
        t_ref: f64,
        time_unit: f64,
    ) -> Result<Self> {
        super::normalize_time(t, time_unit)?;
        if t == t_ref {
            return Err(invalid!("target and reference times coincide ({t})"));
        }
        let (c, h, w) = hr_ref.dims();
        if let Some(gt) = &hr_gt {
            if gt.dims() != (c, h, w) {
                return Err(shape_err!("ground truth {:?} differs from reference {:?}", gt.dims(), hr_ref.dims()));
            }
        }
        if lr_t.channels() != c || lr_t.height() > h || lr_t.width() > w {
            return Err(shape_err!("LR frame {:?} incompatible with HR {:?}", lr_t.dims(), hr_ref.dims()));
        }
        if h % lr_t.height() != 0 || w % lr_t.width() != 0 {
            return Err(shape_err!("LR size {}x{} does not divide HR size {h}x{w}", lr_t.height(), lr_t.width()));
        }
        Ok(Self { location_id, lr_t, hr_ref, hr_gt, t, t_ref, time_unit, extra_lr: Vec::new() })
    }

    pub fn normalized_time(&self) -> f64 {
        self.t / self.time_unit
    }

    pub fn with_extra_lr(mut self, extra: Vec<RasterImage>) -> Self {
        self.extra_lr = extra;
        self
    }
}
