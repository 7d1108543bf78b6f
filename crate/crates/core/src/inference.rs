//! Full-grid generation and sliding-window generation with seam blending.

use alloc::vec::Vec;

use crate::autograd::Var;
use crate::data::{crop_chw, PatchSpec, PreparedSample, RasterImage, ValueRange};
use crate::error::{invalid, Result};
use crate::generator::Generator;
use crate::nn::ParamStore;
use crate::tensor::Tensor;

/// Produces `[C, S, S]` values for a window given the style noise.
pub trait PatchSource {
    fn channels(&self) -> usize;
    fn generate(&mut self, window: &PatchSpec, z: &Tensor<f32>) -> Result<Tensor<f32>>;
}

/// Runs a generator on windows of one prepared sample.
pub struct GeneratorSource<'a> {
    pub generator: &'a Generator,
    pub params: &'a ParamStore<f32>,
    pub sample: &'a PreparedSample,
}

impl PatchSource for GeneratorSource<'_> {
    fn channels(&self) -> usize {
        self.generator.config.channels
    }

    fn generate(&mut self, window: &PatchSpec, z: &Tensor<f32>) -> Result<Tensor<f32>> {
        let p = self.params.bind(false);
        let input = crop_chw(&self.sample.input, window);
        let s = window.size;
        let cat = Var::constant(input.reshape(&[1, input.shape()[0], s, s]));
        let z = Var::constant(z.reshape(&[1, z.numel()]));
        let y = self.generator.forward(&p, &cat, core::slice::from_ref(window), &[self.sample.t], &z)?;
        Ok(y.value().reshape(&[self.channels(), s, s]))
    }
}

/// One generation pass over the whole grid with a single `z`; the result is
/// clamped to `[-1, 1]`.
pub fn generate_full(generator: &Generator, params: &ParamStore<f32>, sample: &PreparedSample, z: &Tensor<f32>) -> Result<RasterImage> {
    let n = generator.config.image_size;
    let mut src = GeneratorSource { generator, params, sample };
    let out = src.generate(&PatchSpec::full(n), z)?;
    RasterImage::from_tensor(&out, ValueRange::Signed)
}

/// A regenerated window and the band of it blended into the canvas.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Seam {
    pub window: PatchSpec,
    /// Blended region `[row0, row1) x [col0, col1)` in absolute pixels.
    pub rows: (usize, usize),
    pub cols: (usize, usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct SlidingWindowPlan {
    pub size: usize,
    pub quarter: usize,
    pub lambda: f64,
    pub height: usize,
    pub width: usize,
    pub base: Vec<PatchSpec>,
    pub vertical: Vec<Seam>,
    pub horizontal: Vec<Seam>,
}

impl SlidingWindowPlan {
    pub fn new(height: usize, width: usize, size: usize, lambda: f64) -> Result<Self> {
        if size == 0 || size % 4 != 0 {
            return Err(invalid!("window side must be a positive multiple of 4, got {size}"));
        }
        if size > height || size > width || height % size != 0 || width % size != 0 {
            return Err(invalid!("window side {size} must divide the {height}x{width} grid"));
        }
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(invalid!("blend weight must be positive, got {lambda}"));
        }
        let (rows, cols) = (height / size, width / size);
        let q = size / 4;
        let mut base = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                base.push(PatchSpec { size, top: i * size, left: j * size });
            }
        }
        let mut vertical = Vec::new();
        for i in 0..rows {
            for j in 0..cols.saturating_sub(1) {
                let seam = (j + 1) * size;
                vertical.push(Seam {
                    window: PatchSpec { size, top: i * size, left: seam - 2 * q },
                    rows: (i * size, (i + 1) * size),
                    cols: (seam - q, seam + q),
                });
            }
        }
        let mut horizontal = Vec::new();
        for i in 0..rows.saturating_sub(1) {
            for j in 0..cols {
                let seam = (i + 1) * size;
                horizontal.push(Seam {
                    window: PatchSpec { size, top: seam - 2 * q, left: j * size },
                    rows: (seam - q, seam + q),
                    cols: (j * size, (j + 1) * size),
                });
            }
        }
        Ok(Self { size, quarter: q, lambda, height, width, base, vertical, horizontal })
    }
}

/// Base tiles, then vertical seams, then horizontal seams, all with one `z`.
/// The result is clamped to `[-1, 1]`.
pub fn sliding_window_generate<S: PatchSource + ?Sized>(source: &mut S, plan: &SlidingWindowPlan, z: &Tensor<f32>) -> Result<RasterImage> {
    let (c, h, w) = (source.channels(), plan.height, plan.width);
    let mut canvas = alloc::vec![0.0f32; c * h * w];
    let check = |t: &Tensor<f32>| -> Result<()> {
        if t.shape() != [c, plan.size, plan.size] {
            return Err(invalid!("patch source returned {:?}, expected [{c}, {s}, {s}]", t.shape(), s = plan.size));
        }
        Ok(())
    };
    for win in &plan.base {
        let patch = source.generate(win, z)?;
        check(&patch)?;
        let d = patch.data();
        for ch in 0..c {
            for x in 0..plan.size {
                let src = (ch * plan.size + x) * plan.size;
                let dst = (ch * h + win.top + x) * w + win.left;
                canvas[dst..dst + plan.size].copy_from_slice(&d[src..src + plan.size]);
            }
        }
    }
    let lambda = plan.lambda;
    for seam in plan.vertical.iter().chain(&plan.horizontal) {
        let patch = source.generate(&seam.window, z)?;
        check(&patch)?;
        let d = patch.data();
        for ch in 0..c {
            for x in seam.rows.0..seam.rows.1 {
                for y in seam.cols.0..seam.cols.1 {
                    let local = (ch * plan.size + x - seam.window.top) * plan.size + y - seam.window.left;
                    let cell = &mut canvas[(ch * h + x) * w + y];
                    *cell = ((*cell as f64 + lambda * d[local] as f64) / (1.0 + lambda)) as f32;
                }
            }
        }
    }
    RasterImage::from_clamped(c, h, w, canvas, ValueRange::Signed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    struct Coordinate {
        calls: Vec<(PatchSpec, Vec<f32>)>,
        width: usize,
    }

    impl PatchSource for Coordinate {
        fn channels(&self) -> usize {
            2
        }

        fn generate(&mut self, win: &PatchSpec, z: &Tensor<f32>) -> Result<Tensor<f32>> {
            self.calls.push((*win, z.data().to_vec()));
            let s = win.size;
            let mut out = vec![0.0f32; 2 * s * s];
            for ch in 0..2 {
                for x in 0..s {
                    for y in 0..s {
                        let (ax, ay) = (win.top + x, win.left + y);
                        out[(ch * s + x) * s + y] = (((ax * self.width + ay) % 97) as f32 / 97.0 - 0.5) * (ch as f32 + 1.0) * z.data()[0];
                    }
                }
            }
            Ok(Tensor::from_vec(&[2, s, s], out))
        }
    }

    #[test]
    fn plan_counts() {
        let plan = SlidingWindowPlan::new(256, 256, 64, 1.0).unwrap();
        assert_eq!((plan.base.len(), plan.vertical.len(), plan.horizontal.len()), (16, 12, 12));
        assert_eq!(plan.quarter, 16);
        let v = plan.vertical[0];
        assert_eq!((v.window.left, v.cols), (32, (48, 80)));
        let single = SlidingWindowPlan::new(64, 64, 64, 1.0).unwrap();
        assert!(single.vertical.is_empty() && single.horizontal.is_empty());
        assert!(SlidingWindowPlan::new(64, 64, 24, 1.0).is_err());
        assert!(SlidingWindowPlan::new(64, 64, 6, 1.0).is_err());
    }

    #[test]
    fn coordinate_source_matches_full_and_shares_z() {
        for lambda in [0.5, 1.0, 3.0] {
            let plan = SlidingWindowPlan::new(32, 32, 8, lambda).unwrap();
            let z = Tensor::from_vec(&[4], vec![0.7f32, 0.1, -0.2, 0.3]);
            let mut src = Coordinate { calls: Vec::new(), width: 32 };
            let out = sliding_window_generate(&mut src, &plan, &z).unwrap();
            let full = src.generate(&PatchSpec::full(32), &z).unwrap();
            let full = RasterImage::from_tensor(&full, ValueRange::Signed).unwrap();
            let diff = out.data().iter().zip(full.data()).map(|(a, b)| (a - b).abs()).fold(0.0f32, f32::max);
            assert!(diff < 1e-6, "max diff {diff}");
            assert_eq!(src.calls.len(), 16 + 12 + 12 + 1);
            assert!(src.calls.iter().all(|(_, zz)| zz == z.data()));
        }
    }

    struct Constant(f32);

    impl PatchSource for Constant {
        fn channels(&self) -> usize {
            3
        }

        fn generate(&mut self, win: &PatchSpec, _: &Tensor<f32>) -> Result<Tensor<f32>> {
            Ok(Tensor::full(&[3, win.size, win.size], self.0))
        }
    }

    #[test]
    fn constant_source_is_a_fixed_point() {
        for lambda in [0.1, 1.0, 7.5] {
            let plan = SlidingWindowPlan::new(32, 16, 8, lambda).unwrap();
            let out = sliding_window_generate(&mut Constant(0.3141), &plan, &Tensor::zeros(&[1])).unwrap();
            assert!(out.data().iter().all(|&v| v == 0.3141));
        }
    }
}
