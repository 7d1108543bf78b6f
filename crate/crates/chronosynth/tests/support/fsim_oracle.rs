//! Second FSIM implementation for cross-checking: direct DFT sums, literal
//! meshgrid/ifftshift construction and explicit convolution loops.

use std::f64::consts::PI;

#[derive(Clone, Copy)]
struct C(f64, f64);

impl C {
    fn mul(self, o: C) -> C {
        C(self.0 * o.0 - self.1 * o.1, self.0 * o.1 + self.1 * o.0)
    }
    fn abs(self) -> f64 {
        (self.0 * self.0 + self.1 * self.1).sqrt()
    }
}

/// Direct 2-D DFT `X[u,v] = sum x[m,n] exp(-+2 pi i (um/R + vn/Cc))`,
/// scaled by `1/(R*Cc)` when inverse.
fn dft2(x: &[C], rows: usize, cols: usize, inverse: bool) -> Vec<C> {
    let sign = if inverse { 1.0 } else { -1.0 };
    let tw = |k: usize, n: usize| {
        let a = sign * 2.0 * PI * (k % n) as f64 / n as f64;
        C(a.cos(), a.sin())
    };
    // along columns index n for every row
    let mut tmp = vec![C(0.0, 0.0); rows * cols];
    for m in 0..rows {
        for v in 0..cols {
            let mut acc = C(0.0, 0.0);
            for n in 0..cols {
                let p = x[m * cols + n].mul(tw(v * n, cols));
                acc = C(acc.0 + p.0, acc.1 + p.1);
            }
            tmp[m * cols + v] = acc;
        }
    }
    let mut out = vec![C(0.0, 0.0); rows * cols];
    for u in 0..rows {
        for v in 0..cols {
            let mut acc = C(0.0, 0.0);
            for m in 0..rows {
                let p = tmp[m * cols + v].mul(tw(u * m, rows));
                acc = C(acc.0 + p.0, acc.1 + p.1);
            }
            out[u * cols + v] = acc;
        }
    }
    if inverse {
        let s = 1.0 / (rows * cols) as f64;
        for z in &mut out {
            *z = C(z.0 * s, z.1 * s);
        }
    }
    out
}

fn range(n: usize) -> Vec<f64> {
    if n % 2 == 1 {
        let h = (n as f64 - 1.0) / 2.0;
        (0..n).map(|i| (i as f64 - h) / (n as f64 - 1.0)).collect()
    } else {
        (0..n).map(|i| (i as f64 - n as f64 / 2.0) / n as f64).collect()
    }
}

/// MATLAB `ifftshift` of a rows x cols matrix.
fn ifftshift(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            out[i * cols + j] = a[((i + rows / 2) % rows) * cols + (j + cols / 2) % cols];
        }
    }
    out
}

fn phase_congruency(im: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let (nscale, norient) = (4, 4);
    let (min_wave, mult, sigma_on_f, d_theta, k, eps): (f64, f64, f64, f64, f64, f64) = (6.0, 2.0, 0.55, 1.2, 2.0, 1e-4);
    let theta_sigma = PI / norient as f64 / d_theta;
    let n = rows * cols;
    let image_fft = dft2(&im.iter().map(|&v| C(v, 0.0)).collect::<Vec<_>>(), rows, cols, false);

    let (xr, yr) = (range(cols), range(rows));
    let mut rad = vec![0.0; n];
    let mut th = vec![0.0; n];
    for i in 0..rows {
        for j in 0..cols {
            rad[i * cols + j] = (xr[j] * xr[j] + yr[i] * yr[i]).sqrt();
            th[i * cols + j] = (-yr[i]).atan2(xr[j]);
        }
    }
    let lp = ifftshift(&rad.iter().map(|r| 1.0 / (1.0 + (r / 0.45).powf(30.0))).collect::<Vec<_>>(), rows, cols);
    let mut radius = ifftshift(&rad, rows, cols);
    let theta = ifftshift(&th, rows, cols);
    radius[0] = 1.0;

    let mut log_gabor = Vec::new();
    for s in 0..nscale {
        let wavelength = min_wave * f64::powi(mult, s as i32);
        let fo = 1.0 / wavelength;
        let mut g: Vec<f64> = (0..n).map(|i| (-((radius[i] / fo).ln()).powi(2) / (2.0 * sigma_on_f.ln().powi(2))).exp() * lp[i]).collect();
        g[0] = 0.0;
        log_gabor.push(g);
    }

    let mut energy_all = vec![0.0; n];
    let mut an_all = vec![0.0; n];
    for o in 0..norient {
        let angl = o as f64 * PI / norient as f64;
        let spread: Vec<f64> = (0..n)
            .map(|i| {
                let ds = theta[i].sin() * angl.cos() - theta[i].cos() * angl.sin();
                let dc = theta[i].cos() * angl.cos() + theta[i].sin() * angl.sin();
                let dt = ds.atan2(dc).abs();
                (-dt * dt / (2.0 * theta_sigma * theta_sigma)).exp()
            })
            .collect();
        let mut eo = Vec::new();
        let mut ifft_filters = Vec::new();
        let mut em_n = 0.0;
        for s in 0..nscale {
            let filter: Vec<f64> = (0..n).map(|i| log_gabor[s][i] * spread[i]).collect();
            let f_inv = dft2(&filter.iter().map(|&v| C(v, 0.0)).collect::<Vec<_>>(), rows, cols, true);
            ifft_filters.push(f_inv.iter().map(|z| z.0 * (n as f64).sqrt()).collect::<Vec<f64>>());
            let prod: Vec<C> = (0..n).map(|i| C(image_fft[i].0 * filter[i], image_fft[i].1 * filter[i])).collect();
            eo.push(dft2(&prod, rows, cols, true));
            if s == 0 {
                em_n = filter.iter().map(|f| f * f).sum();
            }
        }
        let mut energy = vec![0.0; n];
        let mut sum_an = vec![0.0; n];
        for i in 0..n {
            let se: f64 = eo.iter().map(|e| e[i].0).sum();
            let so: f64 = eo.iter().map(|e| e[i].1).sum();
            sum_an[i] = eo.iter().map(|e| e[i].abs()).sum();
            let xe = (se * se + so * so).sqrt() + eps;
            let (me, mo) = (se / xe, so / xe);
            for e in &eo {
                energy[i] += e[i].0 * me + e[i].1 * mo - (e[i].0 * mo - e[i].1 * me).abs();
            }
        }
        let mut sq: Vec<f64> = eo[0].iter().map(|z| z.abs().powi(2)).collect();
        sq.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = if n % 2 == 1 { sq[n / 2] } else { (sq[n / 2 - 1] + sq[n / 2]) / 2.0 };
        let mean_e2n = -median / (0.5f64).ln();
        let noise_power = mean_e2n / em_n;
        let mut est_sum_an2 = 0.0;
        let mut est_sum_ai_aj = 0.0;
        for s in 0..nscale {
            est_sum_an2 += ifft_filters[s].iter().map(|v| v * v).sum::<f64>();
        }
        for si in 0..nscale - 1 {
            for sj in si + 1..nscale {
                est_sum_ai_aj += (0..n).map(|i| ifft_filters[si][i] * ifft_filters[sj][i]).sum::<f64>();
            }
        }
        let est_noise_energy2 = 2.0 * noise_power * est_sum_an2 + 4.0 * noise_power * est_sum_ai_aj;
        let tau = (est_noise_energy2 / 2.0).sqrt();
        let est_noise_energy = tau * (PI / 2.0).sqrt();
        let est_noise_sigma = ((2.0 - PI / 2.0) * tau * tau).sqrt();
        let t = (est_noise_energy + k * est_noise_sigma) / 1.7;
        for i in 0..n {
            energy_all[i] += f64::max(energy[i] - t, 0.0);
            an_all[i] += sum_an[i];
        }
    }
    (0..n).map(|i| if an_all[i] == 0.0 { 0.0 } else { energy_all[i] / an_all[i] }).collect()
}

/// `conv2(im, k, 'same')` for a 3x3 kernel.
fn conv2_same3(im: &[f64], rows: usize, cols: usize, k: [[f64; 3]; 3]) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for i in 0..rows as isize {
        for j in 0..cols as isize {
            let mut acc = 0.0;
            // full convolution index (i + 1, j + 1)
            for a in 0..3isize {
                for b in 0..3isize {
                    let (x, y) = (i + 1 - a, j + 1 - b);
                    if (0..rows as isize).contains(&x) && (0..cols as isize).contains(&y) {
                        acc += im[(x as usize) * cols + y as usize] * k[a as usize][b as usize];
                    }
                }
            }
            out[i as usize * cols + j as usize] = acc;
        }
    }
    out
}

/// FSIM of two `[3, rows, cols]` unit-range RGB planes (row-major per channel).
pub fn fsim(a: &[f32], b: &[f32], rows: usize, cols: usize) -> f64 {
    assert!(rows.min(cols) < 384, "oracle skips the downsampling step");
    let n = rows * cols;
    let luma = |p: &[f32]| -> Vec<f64> { (0..n).map(|i| 255.0 * (0.299 * p[i] as f64 + 0.587 * p[n + i] as f64 + 0.114 * p[2 * n + i] as f64)).collect() };
    let (y1, y2) = (luma(a), luma(b));
    let pc1 = phase_congruency(&y1, rows, cols);
    let pc2 = phase_congruency(&y2, rows, cols);
    let dx = [[3.0 / 16.0, 0.0, -3.0 / 16.0], [10.0 / 16.0, 0.0, -10.0 / 16.0], [3.0 / 16.0, 0.0, -3.0 / 16.0]];
    let dy = [[3.0 / 16.0, 10.0 / 16.0, 3.0 / 16.0], [0.0; 3], [-3.0 / 16.0, -10.0 / 16.0, -3.0 / 16.0]];
    let grad = |y: &[f64]| -> Vec<f64> {
        let gx = conv2_same3(y, rows, cols, dx);
        let gy = conv2_same3(y, rows, cols, dy);
        (0..n).map(|i| (gx[i] * gx[i] + gy[i] * gy[i]).sqrt()).collect()
    };
    let (g1, g2) = (grad(&y1), grad(&y2));
    let (t1, t2) = (0.85, 160.0);
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..n {
        let pcs = (2.0 * pc1[i] * pc2[i] + t1) / (pc1[i].powi(2) + pc2[i].powi(2) + t1);
        let gs = (2.0 * g1[i] * g2[i] + t2) / (g1[i].powi(2) + g2[i].powi(2) + t2);
        let m = pc1[i].max(pc2[i]);
        num += gs * pcs * m;
        den += m;
    }
    num / den
}
