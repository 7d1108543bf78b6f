//! Spatio-temporal positional encoding: a sinusoidal Fourier feature of
//! normalized `(x, y, t)` concatenated with a learned per-pixel embedding.

use alloc::rc::Rc;
use alloc::vec::Vec;

use rand::Rng;

use crate::autograd::Var;
use crate::data::PatchSpec;
use crate::error::{invalid, Error, Result};
use crate::nn::{randn, Bound, ParamId, ParamStore};
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct PositionalEncoder {
    /// `[3, C_fea]` frequency matrix.
    pub b_fo: ParamId,
    /// `[C_fea, H * W]` embedding over the full grid.
    pub e_co: ParamId,
    pub c_fea: usize,
    pub height: usize,
    pub width: usize,
    pub use_time: bool,
}

impl PositionalEncoder {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        c_fea: usize,
        height: usize,
        width: usize,
        use_time: bool,
    ) -> Self {
        let b_fo = store.add("g.encoder.b_fo", randn(rng, &[3, c_fea]));
        let e_co = store.add("g.encoder.e_co", randn(rng, &[c_fea, height * width]));
        Self { b_fo, e_co, c_fea, height, width, use_time }
    }

    pub fn dim(&self) -> usize {
        2 * self.c_fea
    }

    /// Normalized Fourier input for absolute pixel `(x, y)` at normalized time `t`.
    pub fn normalized(&self, x: usize, y: usize, t: f64) -> [f64; 3] {
        let norm = |v: usize, n: usize| if n > 1 { 2.0 * v as f64 / (n - 1) as f64 - 1.0 } else { 0.0 };
        [norm(x, self.height), norm(y, self.width), if self.use_time { t } else { 0.0 }]
    }

    pub fn check_pixels(&self, pixels: &[usize]) -> Result<()> {
        let n = self.height * self.width;
        match pixels.iter().find(|&&i| i >= n) {
            Some(&i) => Err(Error::OutOfGrid { x: i / self.width, y: i % self.width, height: self.height, width: self.width }),
            None => Ok(()),
        }
    }

    /// Row-major absolute indices of the pixels inside `window`.
    pub fn window_pixels(&self, window: &PatchSpec) -> Result<Vec<usize>> {
        window.validate(self.height, self.width)?;
        let mut out = Vec::with_capacity(window.size * window.size);
        for x in window.top..window.top + window.size {
            out.extend((window.left..window.left + window.size).map(|y| x * self.width + y));
        }
        Ok(out)
    }

    /// Encodes one pixel list per sample into `[B, 2 C_fea, P]`.
    ///
    /// `pixels[b]` holds absolute flat indices `x * W + y`; `t[b]` is the
    /// normalized time of sample `b`.
    pub fn encode<T: Real>(&self, p: &Bound<T>, pixels: &[Rc<Vec<usize>>], t: &[f64]) -> Result<Var<T>> {
        let b = pixels.len();
        if b == 0 || t.len() != b {
            return Err(invalid!("encoder needs one time per pixel list, got {} lists and {} times", b, t.len()));
        }
        let n = pixels[0].len();
        if pixels.iter().any(|px| px.len() != n) {
            return Err(invalid!("all samples must query the same number of pixels"));
        }
        let mut coords = Vec::with_capacity(b * 3 * n);
        for (px, &tb) in pixels.iter().zip(t) {
            self.check_pixels(px)?;
            let rows: Vec<[f64; 3]> = px.iter().map(|&i| self.normalized(i / self.width, i % self.width, tb)).collect();
            for k in 0..3 {
                coords.extend(rows.iter().map(|r| T::from_f64(r[k])));
            }
        }
        let coords = Var::constant(Tensor::from_vec(&[b, 3, n], coords));
        let b_fo = p.get(self.b_fo).reshape(&[1, 3, self.c_fea]);
        let e_fo = Var::bmm(&b_fo, &coords, true, false).sin();
        let e_co = p.get(self.e_co);
        let gathered: Vec<Var<T>> = pixels.iter().map(|px| e_co.index_select_last(px).reshape(&[1, self.c_fea, n])).collect();
        let e_co = if b == 1 { gathered.into_iter().next().unwrap() } else { Var::concat(&gathered, 0) };
        Ok(Var::concat(&[e_fo, e_co], 1))
    }
}
