//! Central finite-difference checks of reverse-mode gradients.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autograd::{grad, Var};
use crate::tensor::Tensor;

/// Comparison of analytic and numeric gradients for one input.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradError {
    /// `|a - n| / max(|a|, |n|)` over the sampled entries.
    pub relative: f64,
    pub analytic_norm: f64,
    pub numeric_norm: f64,
}

impl GradError {
    /// Relative error below `tol`, or both gradients below `zero` (a true
    /// zero gradient leaves only finite-difference noise to compare).
    pub fn passes(&self, tol: f64, zero: f64) -> bool {
        self.relative < tol || (self.analytic_norm < zero && self.numeric_norm < zero)
    }
}

/// Gradient errors per input, over at most `max_entries` randomly chosen
/// entries of each input.
///
/// `f` receives one graph leaf per input and must return a scalar-shaped
/// value (a single element).
pub fn relative_errors(inputs: &[Tensor<f64>], f: impl Fn(&[Var<f64>]) -> Var<f64>, max_entries: usize, h: f64, seed: u64) -> Vec<GradError> {
    let leaves: Vec<Var<f64>> = inputs.iter().map(|t| Var::leaf(t.clone())).collect();
    let out = f(&leaves);
    assert_eq!(out.value().numel(), 1, "gradient check needs a scalar output");
    let refs: Vec<&Var<f64>> = leaves.iter().collect();
    let analytic: Vec<Option<Var<f64>>> = grad(&out, &refs, false);
    let eval = |k: usize, t: Tensor<f64>| -> f64 {
        let vars: Vec<Var<f64>> = inputs
            .iter()
            .enumerate()
            .map(|(i, x)| Var::constant(if i == k { t.clone() } else { x.clone() }))
            .collect();
        f(&vars).value().item()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut errors = Vec::with_capacity(inputs.len());
    for (k, x) in inputs.iter().enumerate() {
        let n = x.numel();
        let picks: Vec<usize> = if n <= max_entries { (0..n).collect() } else { (0..max_entries).map(|_| rng.random_range(0..n)).collect() };
        let a = analytic[k].as_ref().map(|g| g.value().clone()).unwrap_or_else(|| Tensor::zeros(x.shape()));
        let (mut diff, mut na, mut nn) = (0.0f64, 0.0f64, 0.0f64);
        for &i in &picks {
            let mut plus = x.clone();
            plus.data_mut()[i] += h;
            let mut minus = x.clone();
            minus.data_mut()[i] -= h;
            let num = (eval(k, plus) - eval(k, minus)) / (2.0 * h);
            let an = a.data()[i];
            diff += (an - num) * (an - num);
            na += an * an;
            nn += num * num;
        }
        let scale = na.sqrt().max(nn.sqrt());
        errors.push(GradError {
            relative: if scale == 0.0 { 0.0 } else { diff.sqrt() / scale },
            analytic_norm: na.sqrt(),
            numeric_norm: nn.sqrt(),
        });
    }
    errors
}

/// Fixed random projection `sum(y * r)` turning any output into a scalar.
pub fn project(y: &Var<f64>, seed: u64) -> Var<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r: Vec<f64> = (0..y.value().numel()).map(|_| rng.random_range(-1.0..1.0)).collect();
    y.mul_const(&Tensor::from_vec(y.shape(), r)).sum_all()
}
