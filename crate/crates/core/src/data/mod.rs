//! Raster handling: LR resampling, input assembly, time normalization,
//! patch cropping, triplet pairing and the synthetic scene generator.

mod pairs;
mod prepared;
mod raster;
pub mod synthetic;

use alloc::vec::Vec;

use rand::Rng;

use crate::config::InputMode;
use crate::error::{invalid, shape_err, Result};

pub use pairs::{ordered_pairs, Direction, TripletSample};
pub use prepared::{crop_chw, stack_chw, PreparedSample};
pub use raster::{RasterImage, ValueRange};

/// Nearest-neighbour upsampling with the floor mapping
/// `src = floor(dst * src_len / dst_len)`.
pub fn resample_nearest(lr: &RasterImage, target_h: usize, target_w: usize) -> Result<RasterImage> {
    if target_h == 0 || target_w == 0 {
        return Err(invalid!("resample target must be non-empty, got {target_h}x{target_w}"));
    }
    let (c, h, w) = lr.dims();
    if target_h < h || target_w < w {
        return Err(invalid!("resample target {target_h}x{target_w} is smaller than source {h}x{w}"));
    }
    if (target_h, target_w) == (h, w) {
        return Ok(lr.clone());
    }
    let rows: Vec<usize> = (0..target_h).map(|x| x * h / target_h).collect();
    let cols: Vec<usize> = (0..target_w).map(|y| y * w / target_w).collect();
    let mut data = Vec::with_capacity(c * target_h * target_w);
    for ch in 0..c {
        for &sx in &rows {
            data.extend(cols.iter().map(|&sy| lr.get(ch, sx, sy)));
        }
    }
    RasterImage::new(c, target_h, target_w, data, lr.range())
}

/// Builds the generator input by stacking the (resampled) LR frame at `t`,
/// the HR reference and, in multi-LR mode, `extra_lr` further LR frames.
pub fn assemble_input(lr_t: &RasterImage, hr_ref: &RasterImage, mode: InputMode, extra_lr: &[RasterImage]) -> Result<RasterImage> {
    let (c, h, w) = hr_ref.dims();
    if extra_lr.len() != mode.extra_lr() {
        return Err(invalid!("input mode {mode:?} expects {} extra LR frames, got {}", mode.extra_lr(), extra_lr.len()));
    }
    let up = |img: &RasterImage| -> Result<RasterImage> {
        let r = resample_nearest(img, h, w)?;
        if r.channels() != c || r.range() != hr_ref.range() {
            return Err(shape_err!("LR frame {:?} ({:?}) does not match HR reference {:?} ({:?})", r.dims(), r.range(), hr_ref.dims(), hr_ref.range()));
        }
        Ok(r)
    };
    let lr = up(lr_t)?;
    let zeros;
    let reference = match mode {
        InputMode::NoHrRef => {
            zeros = RasterImage::filled(c, h, w, 0.0, hr_ref.range())?;
            &zeros
        }
        _ => hr_ref,
    };
    let extras = extra_lr.iter().map(up).collect::<Result<Vec<_>>>()?;
    let mut parts: Vec<&RasterImage> = Vec::with_capacity(2 + extras.len());
    parts.push(&lr);
    parts.push(reference);
    parts.extend(extras.iter());
    RasterImage::stack(&parts)
}

/// `t_raw / u`.
pub fn normalize_time(t_raw: f64, unit: f64) -> Result<f64> {
    if !(unit > 0.0) || !unit.is_finite() {
        return Err(invalid!("time unit must be positive, got {unit}"));
    }
    Ok(t_raw / unit)
}

/// Square window in absolute image coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PatchSpec {
    pub size: usize,
    pub top: usize,
    pub left: usize,
}

impl PatchSpec {
    /// `S / 4`, the seam half-band used by sliding-window generation.
    pub fn quarter(&self) -> usize {
        self.size / 4
    }

    pub fn full(size: usize) -> Self {
        Self { size, top: 0, left: 0 }
    }

    pub fn validate(&self, height: usize, width: usize) -> Result<()> {
        let s = self.size;
        if s == 0 || s > height || s > width {
            return Err(invalid!("patch side {s} does not fit a {height}x{width} image"));
        }
        if height % s != 0 || width % s != 0 {
            return Err(invalid!("patch side {s} must divide {height}x{width}"));
        }
        if self.top > height - s || self.left > width - s {
            return Err(invalid!("patch origin ({}, {}) out of range", self.top, self.left));
        }
        Ok(())
    }
}

/// Crops every raster of one sample at the same uniformly drawn origin.
pub fn random_patch_crop<R: Rng + ?Sized>(arrays: &[&RasterImage], size: usize, rng: &mut R) -> Result<(Vec<RasterImage>, PatchSpec)> {
    let first = arrays.first().ok_or_else(|| invalid!("nothing to crop"))?;
    let (h, w) = (first.height(), first.width());
    if arrays.iter().any(|a| (a.height(), a.width()) != (h, w)) {
        return Err(shape_err!("all rasters of a sample must share height and width"));
    }
    PatchSpec::full(size).validate(h, w)?;
    let spec = PatchSpec { size, top: rng.random_range(0..=h - size), left: rng.random_range(0..=w - size) };
    let crops = arrays.iter().map(|a| a.crop(spec.top, spec.left, size, size)).collect::<Result<Vec<_>>>()?;
    Ok((crops, spec))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::{prop_assert, prop_assert_eq, proptest};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn unit(c: usize, h: usize, w: usize, data: Vec<f32>) -> RasterImage {
        RasterImage::new(c, h, w, data, ValueRange::Unit).unwrap()
    }

    #[test]
    fn integer_factor_replication() {
        let lr = unit(1, 2, 2, vec![0.1, 0.2, 0.3, 0.4]);
        let up = resample_nearest(&lr, 4, 4).unwrap();
        #[rustfmt::skip]
        let expect = vec![
            0.1, 0.1, 0.2, 0.2,
            0.1, 0.1, 0.2, 0.2,
            0.3, 0.3, 0.4, 0.4,
            0.3, 0.3, 0.4, 0.4,
        ];
        assert_eq!(up.data(), expect.as_slice());
    }

    #[test]
    fn equal_size_is_identity() {
        let lr = unit(3, 2, 3, (0..18).map(|i| i as f32 / 17.0).collect());
        assert_eq!(resample_nearest(&lr, 2, 3).unwrap(), lr);
    }

    #[test]
    fn non_integer_factor_uses_floor_mapping() {
        // rows 0..3 of a 3-row source mapped onto 4 rows: floor(x * 3 / 4)
        let lr = unit(1, 3, 1, vec![0.0, 0.5, 1.0]);
        let up = resample_nearest(&lr, 4, 1).unwrap();
        assert_eq!(up.data(), &[0.0, 0.0, 0.5, 1.0]);
    }

    #[test]
    fn resample_rejects_bad_targets() {
        let lr = unit(1, 2, 2, vec![0.0; 4]);
        assert!(resample_nearest(&lr, 0, 4).is_err());
        assert!(resample_nearest(&lr, 1, 4).is_err());
    }

    #[test]
    fn assemble_modes() {
        let lr = unit(3, 2, 2, vec![0.25; 12]);
        let hr = unit(3, 4, 4, vec![0.75; 48]);
        let std = assemble_input(&lr, &hr, InputMode::Standard, &[]).unwrap();
        assert_eq!(std.channels(), 6);
        assert!(std.data()[..48].iter().all(|&v| v == 0.25));
        assert!(std.data()[48..].iter().all(|&v| v == 0.75));

        let no_ref = assemble_input(&lr, &hr, InputMode::NoHrRef, &[]).unwrap();
        assert_eq!(no_ref.channels(), 6);
        assert!(no_ref.data()[48..].iter().all(|&v| v == 0.0));

        let extra = [lr.clone(), lr.clone()];
        let multi = assemble_input(&lr, &hr, InputMode::MultiLr { extra: 2 }, &extra).unwrap();
        assert_eq!(multi.channels(), 12);
        assert!(assemble_input(&lr, &hr, InputMode::MultiLr { extra: 2 }, &extra[..1]).is_err());
    }

    #[test]
    fn assemble_rejects_channel_mismatch() {
        let lr = unit(1, 2, 2, vec![0.0; 4]);
        let hr = unit(3, 4, 4, vec![0.0; 48]);
        assert!(assemble_input(&lr, &hr, InputMode::Standard, &[]).is_err());
    }

    #[test]
    fn time_normalization() {
        assert_eq!(normalize_time(0.0, 2.0).unwrap(), 0.0);
        assert_eq!(normalize_time(2.0, 2.0).unwrap(), 1.0);
        assert_eq!(normalize_time(0.0, 365.0).unwrap(), 0.0);
        assert_eq!(normalize_time(365.0, 365.0).unwrap(), 1.0);
        assert!(normalize_time(1.0, 0.0).is_err());
        assert!(normalize_time(1.0, -2.0).is_err());
    }

    #[test]
    fn full_size_crop_is_identity() {
        let img = unit(1, 8, 8, (0..64).map(|i| i as f32 / 63.0).collect());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (crops, spec) = random_patch_crop(&[&img], 8, &mut rng).unwrap();
        assert_eq!(spec, PatchSpec { size: 8, top: 0, left: 0 });
        assert_eq!(crops[0], img);
    }

    #[test]
    fn crop_origin_is_seeded_and_in_range() {
        let img = unit(3, 256, 256, vec![0.5; 3 * 256 * 256]);
        let a = random_patch_crop(&[&img, &img], 64, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
        let b = random_patch_crop(&[&img, &img], 64, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
        assert_eq!(a.1, b.1);
        assert!(a.1.top <= 192 && a.1.left <= 192);
        assert_eq!(a.0[1].dims(), (3, 64, 64));
        assert_eq!(a.1.quarter(), 16);
        assert!(random_patch_crop(&[&img], 512, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
        assert!(random_patch_crop(&[&img], 48, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }

    proptest! {
        #[test]
        fn nearest_output_values_come_from_source(
            h in 1usize..6, w in 1usize..6, fh in 1usize..4, extra in 0usize..3, seed in 0u64..1000
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let data: Vec<f32> = (0..h * w).map(|_| rng.random_range(0.0f32..=1.0)).collect();
            let lr = unit(1, h, w, data);
            let up = resample_nearest(&lr, h * fh + extra, w * fh).unwrap();
            for v in up.data() {
                prop_assert!(lr.data().contains(v));
            }
            prop_assert_eq!(resample_nearest(&lr, h, w).unwrap(), lr);
        }

        #[test]
        fn crop_paste_round_trip(seed in 0u64..500, s_pow in 1u32..4) {
            let s = 1usize << s_pow;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let img = unit(2, 16, 16, (0..512).map(|_| rng.random_range(0.0f32..=1.0)).collect());
            let (crops, spec) = random_patch_crop(&[&img], s, &mut rng).unwrap();
            let mut canvas = img.clone();
            canvas.paste(&crops[0], spec.top, spec.left).unwrap();
            prop_assert_eq!(canvas, img.clone());
            let mut blank = RasterImage::filled(2, 16, 16, 0.0, ValueRange::Unit).unwrap();
            blank.paste(&crops[0], spec.top, spec.left).unwrap();
            prop_assert_eq!(blank.crop(spec.top, spec.left, s, s).unwrap(), crops[0].clone());
        }
    }
}
