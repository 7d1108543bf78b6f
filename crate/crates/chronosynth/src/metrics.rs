//! Full-reference quality metrics on unit-range rasters.

use std::f64::consts::PI;
use std::sync::Arc;

use chronosynth_core::data::{RasterImage, ValueRange};
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

fn unit(img: &RasterImage) -> RasterImage {
    if img.range() == ValueRange::Signed {
        img.to_unit()
    } else {
        img.clone()
    }
}

fn same_shape(a: &RasterImage, b: &RasterImage) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(chronosynth_core::Error::Shape(format!("metric inputs {:?} and {:?} differ", a.dims(), b.dims())).into());
    }
    Ok(())
}

/// `10 log10(1 / MSE)` over all channels and pixels; identical inputs give
/// `f64::INFINITY`.
pub fn psnr(a: &RasterImage, b: &RasterImage) -> Result<f64> {
    same_shape(a, b)?;
    let (a, b) = (unit(a), unit(b));
    let n = a.data().len() as f64;
    let mse = a.data().iter().zip(b.data()).map(|(&x, &y)| (x as f64 - y as f64).powi(2)).sum::<f64>() / n;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (1.0 / mse).log10())
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn gaussian_taps(size: usize, sigma: f64) -> Vec<f64> {
    let mid = (size as f64 - 1.0) / 2.0;
    let raw: Vec<f64> = (0..size).map(|i| (-((i as f64 - mid).powi(2)) / (2.0 * sigma * sigma)).exp()).collect();
    let sum: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / sum).collect()
}

/// Separable "valid" filtering of an `h x w` plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (oh, ow) = (h + 1 - k, w + 1 - k);
    let mut rows = vec![0.0; h * ow];
    for x in 0..h {
        for y in 0..ow {
            rows[x * ow + y] = taps.iter().enumerate().map(|(i, t)| t * plane[x * w + y + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for x in 0..oh {
        for y in 0..ow {
            out[x * ow + y] = taps.iter().enumerate().map(|(i, t)| t * rows[(x + i) * ow + y]).sum();
        }
    }
    out
}

/// Mean SSIM over all valid 11x11 Gaussian windows, averaged over channels.
pub fn ssim(a: &RasterImage, b: &RasterImage) -> Result<f64> {
    same_shape(a, b)?;
    let (a, b) = (unit(a), unit(b));
    let (c, h, w) = a.dims();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(chronosynth_core::Error::InvalidArgument(format!("SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {h}x{w}")).into());
    }
    let taps = gaussian_taps(SSIM_WINDOW, SSIM_SIGMA);
    let (c1, c2) = (SSIM_K1 * SSIM_K1, SSIM_K2 * SSIM_K2);
    let mut total = 0.0;
    for ch in 0..c {
        let x: Vec<f64> = a.plane(ch).iter().map(|&v| v as f64).collect();
        let y: Vec<f64> = b.plane(ch).iter().map(|&v| v as f64).collect();
        let prod = |p: &[f64], q: &[f64]| -> Vec<f64> { p.iter().zip(q).map(|(u, v)| u * v).collect() };
        let mx = filter_valid(&x, h, w, &taps);
        let my = filter_valid(&y, h, w, &taps);
        let sxx = filter_valid(&prod(&x, &x), h, w, &taps);
        let syy = filter_valid(&prod(&y, &y), h, w, &taps);
        let sxy = filter_valid(&prod(&x, &y), h, w, &taps);
        let mut sum = 0.0;
        for i in 0..mx.len() {
            let (ux, uy) = (mx[i], my[i]);
            let vx = sxx[i] - ux * ux;
            let vy = syy[i] - uy * uy;
            let cov = sxy[i] - ux * uy;
            sum += ((2.0 * ux * uy + c1) * (2.0 * cov + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
        }
        total += sum / mx.len() as f64;
    }
    Ok(total / c as f64)
}

/// BT.601 luma on the 0..255 scale.
pub fn luminance(img: &RasterImage) -> Vec<f64> {
    let img = unit(img);
    let (c, h, w) = img.dims();
    if c == 1 {
        return img.data().iter().map(|&v| 255.0 * v as f64).collect();
    }
    (0..h * w)
        .map(|i| 255.0 * (0.299 * img.plane(0)[i] as f64 + 0.587 * img.plane(1)[i] as f64 + 0.114 * img.plane(2)[i] as f64))
        .collect()
}

/// Phase-congruency settings of the FSIM reference implementation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhaseCongruency {
    pub scales: usize,
    pub orientations: usize,
    pub min_wavelength: f64,
    pub mult: f64,
    pub sigma_on_f: f64,
    pub d_theta_on_sigma: f64,
    pub k: f64,
    pub epsilon: f64,
}

impl Default for PhaseCongruency {
    fn default() -> Self {
        Self { scales: 4, orientations: 4, min_wavelength: 6.0, mult: 2.0, sigma_on_f: 0.55, d_theta_on_sigma: 1.2, k: 2.0, epsilon: 1e-4 }
    }
}

struct Fft2 {
    rows: usize,
    cols: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl Fft2 {
    fn new(rows: usize, cols: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            rows,
            cols,
            row_fwd: planner.plan_fft_forward(cols),
            row_inv: planner.plan_fft_inverse(cols),
            col_fwd: planner.plan_fft_forward(rows),
            col_inv: planner.plan_fft_inverse(rows),
        }
    }

    /// In place; the inverse is scaled by `1 / (rows * cols)`.
    fn run(&self, data: &mut [Complex<f64>], inverse: bool) {
        let (r, c) = (self.rows, self.cols);
        let (row, col) = if inverse { (&self.row_inv, &self.col_inv) } else { (&self.row_fwd, &self.col_fwd) };
        for line in data.chunks_exact_mut(c) {
            row.process(line);
        }
        let mut column = vec![Complex::new(0.0, 0.0); r];
        for j in 0..c {
            for i in 0..r {
                column[i] = data[i * c + j];
            }
            col.process(&mut column);
            for i in 0..r {
                data[i * c + j] = column[i];
            }
        }
        if inverse {
            let s = 1.0 / (r * c) as f64;
            data.iter_mut().for_each(|v| *v *= s);
        }
    }
}

/// Normalized frequency axis of length `n`, already quadrant-shifted so
/// zero frequency sits at index 0.
fn shifted_axis(n: usize) -> Vec<f64> {
    let centered: Vec<f64> = if n % 2 == 1 {
        let half = (n - 1) as f64 / 2.0;
        (0..n).map(|i| (i as f64 - half) / (n - 1).max(1) as f64).collect()
    } else {
        (0..n).map(|i| (i as f64 - (n / 2) as f64) / n as f64).collect()
    };
    (0..n).map(|i| centered[(i + n / 2) % n]).collect()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

impl PhaseCongruency {
    /// Phase congruency map of an `rows x cols` plane.
    pub fn compute(&self, im: &[f64], rows: usize, cols: usize) -> Vec<f64> {
        let n = rows * cols;
        let fft = Fft2::new(rows, cols);
        let mut spectrum: Vec<Complex<f64>> = im.iter().map(|&v| Complex::new(v, 0.0)).collect();
        fft.run(&mut spectrum, false);

        let (xs, ys) = (shifted_axis(cols), shifted_axis(rows));
        let mut radius = vec![0.0; n];
        let mut sin_t = vec![0.0; n];
        let mut cos_t = vec![0.0; n];
        let mut lowpass = vec![0.0; n];
        for i in 0..rows {
            for j in 0..cols {
                let (x, y) = (xs[j], ys[i]);
                let r = (x * x + y * y).sqrt();
                lowpass[i * cols + j] = 1.0 / (1.0 + (r / 0.45).powi(30));
                radius[i * cols + j] = r;
                let theta = (-y).atan2(x);
                sin_t[i * cols + j] = theta.sin();
                cos_t[i * cols + j] = theta.cos();
            }
        }
        radius[0] = 1.0;

        let log_sigma2 = 2.0 * self.sigma_on_f.ln().powi(2);
        let log_gabor: Vec<Vec<f64>> = (0..self.scales)
            .map(|s| {
                let fo = 1.0 / (self.min_wavelength * self.mult.powi(s as i32));
                let mut g: Vec<f64> = (0..n).map(|i| (-(radius[i] / fo).ln().powi(2) / log_sigma2).exp() * lowpass[i]).collect();
                g[0] = 0.0;
                g
            })
            .collect();
        let theta_sigma = PI / self.orientations as f64 / self.d_theta_on_sigma;

        let mut energy_all = vec![0.0; n];
        let mut an_all = vec![0.0; n];
        for o in 0..self.orientations {
            let angle = o as f64 * PI / self.orientations as f64;
            let (sa, ca) = angle.sin_cos();
            let spread: Vec<f64> = (0..n)
                .map(|i| {
                    let ds = sin_t[i] * ca - cos_t[i] * sa;
                    let dc = cos_t[i] * ca + sin_t[i] * sa;
                    let d = ds.atan2(dc).abs();
                    (-d * d / (2.0 * theta_sigma * theta_sigma)).exp()
                })
                .collect();
            let mut sum_e = vec![0.0; n];
            let mut sum_o = vec![0.0; n];
            let mut sum_an = vec![0.0; n];
            let mut responses: Vec<Vec<Complex<f64>>> = Vec::with_capacity(self.scales);
            let mut filter_ifft: Vec<Vec<f64>> = Vec::with_capacity(self.scales);
            let mut em_n = 0.0;
            for (s, g) in log_gabor.iter().enumerate() {
                let filter: Vec<f64> = g.iter().zip(&spread).map(|(a, b)| a * b).collect();
                let mut f_sp: Vec<Complex<f64>> = filter.iter().map(|&v| Complex::new(v, 0.0)).collect();
                fft.run(&mut f_sp, true);
                filter_ifft.push(f_sp.iter().map(|v| v.re * (n as f64).sqrt()).collect());
                let mut eo: Vec<Complex<f64>> = spectrum.iter().zip(&filter).map(|(a, &f)| a * f).collect();
                fft.run(&mut eo, true);
                for i in 0..n {
                    sum_an[i] += eo[i].norm();
                    sum_e[i] += eo[i].re;
                    sum_o[i] += eo[i].im;
                }
                if s == 0 {
                    em_n = filter.iter().map(|v| v * v).sum();
                }
                responses.push(eo);
            }
            let mut energy = vec![0.0; n];
            for i in 0..n {
                let x_energy = (sum_e[i] * sum_e[i] + sum_o[i] * sum_o[i]).sqrt() + self.epsilon;
                let (mean_e, mean_o) = (sum_e[i] / x_energy, sum_o[i] / x_energy);
                for eo in &responses {
                    let (e, od) = (eo[i].re, eo[i].im);
                    energy[i] += e * mean_e + od * mean_o - (e * mean_o - od * mean_e).abs();
                }
            }
            let median_e2n = median(responses[0].iter().map(|v| v.norm_sqr()).collect());
            let mean_e2n = -median_e2n / 0.5f64.ln();
            let noise_power = mean_e2n / em_n;
            let mut sum_an2 = 0.0;
            let mut sum_aiaj = 0.0;
            for i in 0..n {
                for si in 0..self.scales {
                    sum_an2 += filter_ifft[si][i].powi(2);
                    for sj in si + 1..self.scales {
                        sum_aiaj += filter_ifft[si][i] * filter_ifft[sj][i];
                    }
                }
            }
            let noise_energy2 = 2.0 * noise_power * sum_an2 + 4.0 * noise_power * sum_aiaj;
            let tau = (noise_energy2 / 2.0).sqrt();
            let noise_mean = tau * (PI / 2.0).sqrt();
            let noise_sigma = ((2.0 - PI / 2.0) * tau * tau).sqrt();
            let threshold = (noise_mean + self.k * noise_sigma) / 1.7;
            for i in 0..n {
                energy_all[i] += (energy[i] - threshold).max(0.0);
                an_all[i] += sum_an[i];
            }
        }
        energy_all.iter().zip(&an_all).map(|(e, a)| if *a > 0.0 { e / a } else { 0.0 }).collect()
    }
}

/// `conv2(.., 'same')` with zero padding.
fn conv_same(im: &[f64], rows: usize, cols: usize, kernel: &[f64], k: usize) -> Vec<f64> {
    let off = (k / 2) as isize;
    let mut out = vec![0.0; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            let mut acc = 0.0;
            for a in 0..k {
                for b in 0..k {
                    let (x, y) = (i as isize + off - a as isize, j as isize + off - b as isize);
                    if x >= 0 && y >= 0 && (x as usize) < rows && (y as usize) < cols {
                        acc += im[x as usize * cols + y as usize] * kernel[a * k + b];
                    }
                }
            }
            out[i * cols + j] = acc;
        }
    }
    out
}

const SCHARR_X: [f64; 9] = [3.0 / 16.0, 0.0, -3.0 / 16.0, 10.0 / 16.0, 0.0, -10.0 / 16.0, 3.0 / 16.0, 0.0, -3.0 / 16.0];
const SCHARR_Y: [f64; 9] = [3.0 / 16.0, 10.0 / 16.0, 3.0 / 16.0, 0.0, 0.0, 0.0, -3.0 / 16.0, -10.0 / 16.0, -3.0 / 16.0];
pub const FSIM_T1: f64 = 0.85;
pub const FSIM_T2: f64 = 160.0;

/// Box-filter and subsample by `max(1, round(min(H, W) / 256))`.
fn fsim_downsample(y: &[f64], rows: usize, cols: usize) -> (Vec<f64>, usize, usize) {
    let f = ((rows.min(cols) as f64 / 256.0).round() as usize).max(1);
    if f == 1 {
        return (y.to_vec(), rows, cols);
    }
    let kernel = vec![1.0 / (f * f) as f64; f * f];
    let smooth = conv_same(y, rows, cols, &kernel, f);
    let (r2, c2) = (rows.div_ceil(f), cols.div_ceil(f));
    let mut out = Vec::with_capacity(r2 * c2);
    for i in (0..rows).step_by(f) {
        for j in (0..cols).step_by(f) {
            out.push(smooth[i * cols + j]);
        }
    }
    (out, r2, c2)
}

fn gradient_magnitude(y: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let gx = conv_same(y, rows, cols, &SCHARR_X, 3);
    let gy = conv_same(y, rows, cols, &SCHARR_Y, 3);
    gx.iter().zip(&gy).map(|(a, b)| (a * a + b * b).sqrt()).collect()
}

/// FSIM on luminance. Inputs whose phase congruency vanishes everywhere
/// score 1 when identical and are rejected otherwise.
pub fn fsim(a: &RasterImage, b: &RasterImage) -> Result<f64> {
    same_shape(a, b)?;
    let (_, h, w) = a.dims();
    let (y1, rows, cols) = fsim_downsample(&luminance(a), h, w);
    let (y2, _, _) = fsim_downsample(&luminance(b), h, w);
    let pc = PhaseCongruency::default();
    let pc1 = pc.compute(&y1, rows, cols);
    let pc2 = pc.compute(&y2, rows, cols);
    let g1 = gradient_magnitude(&y1, rows, cols);
    let g2 = gradient_magnitude(&y2, rows, cols);
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..rows * cols {
        let s_pc = (2.0 * pc1[i] * pc2[i] + FSIM_T1) / (pc1[i] * pc1[i] + pc2[i] * pc2[i] + FSIM_T1);
        let s_g = (2.0 * g1[i] * g2[i] + FSIM_T2) / (g1[i] * g1[i] + g2[i] * g2[i] + FSIM_T2);
        let m = pc1[i].max(pc2[i]);
        num += s_pc * s_g * m;
        den += m;
    }
    if den == 0.0 {
        return if y1 == y2 { Ok(1.0) } else { Err(chronosynth_core::Error::Degenerate("phase congruency is zero everywhere".into()).into()) };
    }
    Ok(num / den)
}

/// A named full-reference metric.
pub trait Metric: Send + Sync {
    fn name(&self) -> &str;
    fn compute(&self, a: &RasterImage, b: &RasterImage) -> Result<f64>;
    /// False for registered slots without a backing implementation.
    fn available(&self) -> bool {
        true
    }
}

pub struct Psnr;
pub struct Ssim;
pub struct Fsim;

/// Registry slot for LPIPS; computing it needs pretrained network weights,
/// which callers supply through `backend`.
#[derive(Default)]
pub struct Lpips {
    pub backend: Option<Box<dyn Fn(&RasterImage, &RasterImage) -> Result<f64> + Send + Sync>>,
}

impl Metric for Psnr {
    fn name(&self) -> &str {
        "psnr"
    }
    fn compute(&self, a: &RasterImage, b: &RasterImage) -> Result<f64> {
        psnr(a, b)
    }
}

impl Metric for Ssim {
    fn name(&self) -> &str {
        "ssim"
    }
    fn compute(&self, a: &RasterImage, b: &RasterImage) -> Result<f64> {
        ssim(a, b)
    }
}

impl Metric for Fsim {
    fn name(&self) -> &str {
        "fsim"
    }
    fn compute(&self, a: &RasterImage, b: &RasterImage) -> Result<f64> {
        fsim(a, b)
    }
}

impl Metric for Lpips {
    fn name(&self) -> &str {
        "lpips"
    }
    fn compute(&self, a: &RasterImage, b: &RasterImage) -> Result<f64> {
        match &self.backend {
            Some(f) => f(a, b),
            None => Err(Error::Format("lpips has no backend; supply pretrained weights through Lpips::backend".into())),
        }
    }
    fn available(&self) -> bool {
        self.backend.is_some()
    }
}

pub const DEFAULT_METRICS: [&str; 3] = ["psnr", "ssim", "fsim"];

pub fn metric_by_name(name: &str) -> Option<Box<dyn Metric>> {
    match name {
        "psnr" => Some(Box::new(Psnr)),
        "ssim" => Some(Box::new(Ssim)),
        "fsim" => Some(Box::new(Fsim)),
        "lpips" => Some(Box::new(Lpips::default())),
        _ => None,
    }
}

/// Resolves metric names, rejecting unknown and unavailable ones together.
pub fn metrics_from_names<S: AsRef<str>>(names: &[S]) -> std::result::Result<Vec<Box<dyn Metric>>, Vec<String>> {
    let mut out = Vec::new();
    let mut bad = Vec::new();
    for n in names {
        match metric_by_name(n.as_ref()) {
            Some(m) if m.available() => out.push(m),
            Some(m) => bad.push(format!("metric '{}' is not available in this build", m.name())),
            None => bad.push(format!("unknown metric '{}'", n.as_ref())),
        }
    }
    if bad.is_empty() {
        Ok(out)
    } else {
        Err(bad)
    }
}
