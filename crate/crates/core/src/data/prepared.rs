use alloc::string::String;
use alloc::vec::Vec;

use super::{assemble_input, PatchSpec, TripletSample};
use crate::config::ModelConfig;
use crate::error::{invalid, Result};
use crate::tensor::Tensor;

/// A triplet converted to model-side tensors in the signed range.
#[derive(Clone, Debug)]
pub struct PreparedSample {
    pub location_id: String,
    /// Assembled input `[C_in, H, W]`.
    pub input: Tensor<f32>,
    /// Ground truth `[C, H, W]`, when known.
    pub target: Option<Tensor<f32>>,
    /// Normalized target time.
    pub t: f64,
    pub t_raw: f64,
    pub t_ref_raw: f64,
}

impl PreparedSample {
    pub fn new(sample: &TripletSample, config: &ModelConfig) -> Result<Self> {
        let n = config.image_size;
        if sample.hr_ref.height() != n || sample.hr_ref.width() != n || sample.hr_ref.channels() != config.channels {
            return Err(invalid!(
                "sample {} has HR shape {:?}, model expects ({}, {n}, {n})",
                sample.location_id,
                sample.hr_ref.dims(),
                config.channels
            ));
        }
        let cat = assemble_input(&sample.lr_t, &sample.hr_ref, config.input_mode, &sample.extra_lr)?;
        Ok(Self {
            location_id: sample.location_id.clone(),
            input: cat.to_signed().to_tensor(),
            target: sample.hr_gt.as_ref().map(|gt| gt.to_signed().to_tensor()),
            t: sample.normalized_time(),
            t_raw: sample.t,
            t_ref_raw: sample.t_ref,
        })
    }

    pub fn size(&self) -> usize {
        self.input.shape()[1]
    }
}

/// `[C, H, W]` -> `[C, S, S]` at the window origin.
pub fn crop_chw(t: &Tensor<f32>, window: &PatchSpec) -> Tensor<f32> {
    if window.top == 0 && window.left == 0 && window.size == t.shape()[1] && window.size == t.shape()[2] {
        return t.clone();
    }
    t.narrow(1, window.top, window.size).narrow(2, window.left, window.size)
}

/// Stacks equally shaped `[C, H, W]` tensors into `[B, C, H, W]`.
pub fn stack_chw(parts: &[Tensor<f32>]) -> Tensor<f32> {
    let shape = parts[0].shape().to_vec();
    let mut data = Vec::with_capacity(parts.len() * parts[0].numel());
    for p in parts {
        assert_eq!(p.shape(), shape.as_slice(), "stacked tensors must share a shape");
        data.extend_from_slice(p.data());
    }
    let mut full = alloc::vec![parts.len()];
    full.extend(shape);
    Tensor::from_vec(&full, data)
}
