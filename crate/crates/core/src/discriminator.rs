//! Conditional residual discriminator scoring
//! `[candidate | coordinate grid | LR | HR reference]` stacks.

use alloc::format;
use alloc::vec::Vec;
use core::f64::consts::FRAC_1_SQRT_2;

use rand::Rng;

use crate::autograd::Var;
use crate::config::ModelConfig;
use crate::data::PatchSpec;
use crate::error::{invalid, Result};
use crate::nn::{Bound, Conv2d, Linear, ParamStore};
use crate::real::{c, Real};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct ResBlock {
    pub conv0: Conv2d,
    pub conv1: Conv2d,
    pub skip: Conv2d,
}

impl ResBlock {
    fn new<T: Real, R: Rng + ?Sized>(store: &mut ParamStore<T>, rng: &mut R, name: &str, cin: usize, cout: usize) -> Self {
        Self {
            conv0: Conv2d::new(store, rng, &format!("{name}.conv0"), cin, cin, 3, 1, true),
            conv1: Conv2d::new(store, rng, &format!("{name}.conv1"), cin, cout, 3, 1, true),
            skip: Conv2d::new(store, rng, &format!("{name}.skip"), cin, cout, 1, 1, false),
        }
    }

    fn forward<T: Real>(&self, p: &Bound<T>, x: &Var<T>) -> Var<T> {
        let y = self.conv0.forward_lrelu(p, x).avg_pool2();
        let y = self.conv1.forward_lrelu(p, &y);
        let s = self.skip.forward(p, &x.avg_pool2());
        y.add(&s).scale(c(FRAC_1_SQRT_2))
    }
}

#[derive(Clone, Debug)]
pub struct Discriminator {
    pub channels: usize,
    pub size: usize,
    image_size: usize,
    uses_time: bool,
    pub from_rgb: Conv2d,
    pub blocks: Vec<ResBlock>,
    pub head_conv: Conv2d,
    pub head_fc: Linear,
    pub head_out: Linear,
}

impl Discriminator {
    /// Discriminator for the training window of `config`.
    pub fn new<T: Real, R: Rng + ?Sized>(config: &ModelConfig, store: &mut ParamStore<T>, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let size = config.train_size();
        let stages = ModelConfig::disc_stages(size);
        let width = |i: usize| (config.disc_base_channels << i.min(20)).min(config.disc_max_channels);
        let cin = 3 * config.channels + 3;
        let from_rgb = Conv2d::new(store, rng, "d.from_rgb", cin, width(0), 1, 1, true);
        let blocks = (0..stages).map(|i| ResBlock::new(store, rng, &format!("d.block{i}"), width(i), width(i + 1))).collect();
        let top = width(stages);
        let final_side = size >> stages;
        Ok(Self {
            channels: config.channels,
            size,
            image_size: config.image_size,
            uses_time: config.disc_uses_time,
            from_rgb,
            blocks,
            head_conv: Conv2d::new(store, rng, "d.head.conv", top, top, 3, 1, true),
            head_fc: Linear::new(store, rng, "d.head.fc", top * final_side * final_side, top, true),
            head_out: Linear::new(store, rng, "d.head.out", top, 1, true),
        })
    }

    pub fn input_channels(&self) -> usize {
        3 * self.channels + 3
    }

    pub fn stages(&self) -> usize {
        self.blocks.len()
    }

    /// `[B, 3, S, S]` grid of normalized absolute `(x, y, t)` per window.
    pub fn coord_grid<T: Real>(&self, windows: &[PatchSpec], times: &[f64]) -> Tensor<T> {
        let n = self.image_size;
        let norm = |v: usize| if n > 1 { 2.0 * v as f64 / (n - 1) as f64 - 1.0 } else { 0.0 };
        let mut data = Vec::with_capacity(windows.len() * 3 * self.size * self.size);
        for (win, &t) in windows.iter().zip(times) {
            let s = win.size;
            for x in 0..s {
                data.extend((0..s).map(|_| T::from_f64(norm(win.top + x))));
            }
            for _ in 0..s {
                data.extend((0..s).map(|y| T::from_f64(norm(win.left + y))));
            }
            let tv = T::from_f64(if self.uses_time { t } else { 0.0 });
            data.extend(core::iter::repeat(tv).take(s * s));
        }
        let s = windows.first().map_or(self.size, |w| w.size);
        Tensor::from_vec(&[windows.len(), 3, s, s], data)
    }

    /// Scores `[B]` for candidates `[B, C, S, S]` given the `[B, 2C, S, S]`
    /// LR/reference stack and the coordinate grid.
    pub fn forward<T: Real>(&self, p: &Bound<T>, candidate: &Var<T>, cond: &Var<T>, coords: &Var<T>) -> Result<Var<T>> {
        let cs = candidate.shape();
        let ch = self.channels;
        if cs.len() != 4 || cs[1] != ch || cs[2] != self.size || cs[3] != self.size {
            return Err(invalid!("discriminator expects candidates [B, {ch}, {s}, {s}], got {cs:?}", s = self.size));
        }
        let expect_cond = [cs[0], 2 * ch, cs[2], cs[3]];
        let expect_coords = [cs[0], 3, cs[2], cs[3]];
        if cond.shape() != expect_cond || coords.shape() != expect_coords {
            return Err(invalid!(
                "discriminator conditioning {:?} / coordinates {:?} do not match candidates {cs:?}",
                cond.shape(),
                coords.shape()
            ));
        }
        let x = Var::concat(&[candidate.clone(), coords.clone(), cond.clone()], 1);
        let mut y = self.from_rgb.forward_lrelu(p, &x);
        for block in &self.blocks {
            y = block.forward(p, &y);
        }
        let y = self.head_conv.forward_lrelu(p, &y);
        let b = cs[0];
        let flat: usize = y.shape()[1..].iter().product();
        let y = self.head_fc.forward_lrelu(p, &y.reshape(&[b, flat, 1])).reshape(&[b, self.head_fc.out_features]);
        Ok(self.head_out.forward_vec(p, &y).reshape(&[b]))
    }
}
