mod support;

use chronosynth::metrics::{fsim, metric_by_name, metrics_from_names, psnr, ssim, Lpips, Metric, PhaseCongruency};
use chronosynth_core::data::{RasterImage, ValueRange};
use proptest::prelude::{prop_assert, proptest, ProptestConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use support::fsim_oracle;

fn flat(v: f32, h: usize, w: usize) -> RasterImage {
    RasterImage::filled(3, h, w, v, ValueRange::Unit).unwrap()
}

/// Smooth random scene with edges, so phase congruency is non-trivial.
fn scene(rng: &mut ChaCha8Rng, h: usize, w: usize) -> RasterImage {
    let mut data = vec![0.0f32; 3 * h * w];
    let (fx, fy, ph): (f32, f32, f32) = (rng.random_range(0.05..0.4), rng.random_range(0.05..0.4), rng.random_range(0.0..6.0));
    let (top, left) = (rng.random_range(0..h / 2), rng.random_range(0..w / 2));
    for c in 0..3 {
        let base: f32 = rng.random_range(0.2..0.6);
        for x in 0..h {
            for y in 0..w {
                let mut v = base + 0.15 * (fx * x as f32 + fy * y as f32 + ph + c as f32).sin() + rng.random_range(-0.05..0.05);
                if x >= top && x < top + h / 3 && y >= left && y < left + w / 4 {
                    v += 0.3;
                }
                data[(c * h + x) * w + y] = v.clamp(0.0, 1.0);
            }
        }
    }
    RasterImage::new(3, h, w, data, ValueRange::Unit).unwrap()
}

#[test]
fn psnr_values() {
    let a = flat(0.0, 8, 8);
    let b = flat(0.5, 8, 8);
    assert!((psnr(&a, &b).unwrap() - 6.0206).abs() < 1e-3);
    assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
    assert!(psnr(&a, &flat(0.5, 8, 4)).is_err());
}

#[test]
fn psnr_falls_with_noise() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let clean = scene(&mut rng, 32, 32);
    let mut last = f64::INFINITY;
    for sigma in [0.01f32, 0.05, 0.1] {
        let (c, h, w) = clean.dims();
        let mut r = ChaCha8Rng::seed_from_u64(1);
        let data: Vec<f32> = clean
            .data()
            .iter()
            .map(|v| {
                let (u1, u2): (f32, f32) = (r.random_range(1e-7..1.0), r.random_range(0.0..1.0));
                v + sigma * (-2.0 * u1.ln()).sqrt() * (2.0 * std::f32::consts::PI * u2).cos()
            })
            .collect();
        let b = RasterImage::from_clamped(c, h, w, data, ValueRange::Unit).unwrap();
        let p = psnr(&clean, &b).unwrap();
        assert!(p < last, "sigma {sigma}: {p} !< {last}");
        last = p;
    }
}

#[test]
fn ssim_values() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let a = scene(&mut rng, 24, 20);
    assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-6);
    let c1 = 1e-4;
    let v = ssim(&flat(0.0, 16, 16), &flat(1.0, 16, 16)).unwrap();
    assert!((v - c1 / (1.0 + c1)).abs() < 1e-9, "{v}");
    assert!(ssim(&flat(0.0, 10, 16), &flat(0.0, 10, 16)).is_err());
    let signed = a.to_signed();
    assert!((ssim(&signed, &a).unwrap() - 1.0).abs() < 1e-6);
}

#[test]
fn fsim_identity_and_range() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a = scene(&mut rng, 32, 32);
    let b = scene(&mut rng, 32, 32);
    assert!((fsim(&a, &a).unwrap() - 1.0).abs() < 1e-6);
    let v = fsim(&a, &b).unwrap();
    assert!(v > 0.0 && v <= 1.0);
    assert_eq!(fsim(&flat(0.3, 16, 16), &flat(0.3, 16, 16)).unwrap(), 1.0);
    assert!(fsim(&flat(0.3, 16, 16), &flat(0.6, 16, 16)).is_err());
}

#[test]
fn fsim_matches_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for (h, w) in [(32, 32), (20, 27), (17, 24)] {
        let a = scene(&mut rng, h, w);
        let b = scene(&mut rng, h, w);
        let ours = fsim(&a, &b).unwrap();
        let oracle = fsim_oracle::fsim(a.data(), b.data(), h, w);
        assert!((ours - oracle).abs() < 1e-6, "{h}x{w}: {ours} vs {oracle}");
    }
}

#[test]
fn phase_congruency_sees_edges() {
    let (h, w) = (32, 32);
    let step: Vec<f64> = (0..h * w).map(|i| if i % w < w / 2 { 50.0 } else { 200.0 }).collect();
    let pc = PhaseCongruency::default().compute(&step, h, w);
    let at = |x: usize, y: usize| pc[x * w + y];
    assert!(at(16, 16) > 0.5, "{}", at(16, 16));
    assert!(at(16, 8) < at(16, 16));
    assert!(pc.iter().all(|v| (0.0..=1.0 + 1e-12).contains(v)));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]
    #[test]
    fn metrics_are_symmetric(seed in 0u64..100_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = scene(&mut rng, 16, 16);
        let b = scene(&mut rng, 16, 16);
        prop_assert!(psnr(&a, &b).unwrap() == psnr(&b, &a).unwrap());
        prop_assert!((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() < 1e-12);
        prop_assert!((fsim(&a, &b).unwrap() - fsim(&b, &a).unwrap()).abs() < 1e-12);
        let s = ssim(&a, &b).unwrap();
        prop_assert!((-1.0..=1.0).contains(&s));
    }
}

#[test]
fn registry() {
    for n in ["psnr", "ssim", "fsim"] {
        assert_eq!(metric_by_name(n).unwrap().name(), n);
    }
    assert!(matches!(metrics_from_names(&["psnr", "nope", "lpips"]), Err(bad) if bad.len() == 2));
    let slot = Lpips { backend: Some(Box::new(|a, b| Ok(psnr(a, b)?.min(1.0)))) };
    assert!(slot.available());
    let img = flat(0.2, 4, 4);
    assert_eq!(slot.compute(&img, &img).unwrap(), 1.0);
    assert!(Lpips::default().compute(&img, &img).is_err());
}
