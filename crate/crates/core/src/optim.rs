//! Adam with bias correction.

use alloc::vec;
use alloc::vec::Vec;

use crate::nn::ParamStore;
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta0: f64,
    pub beta1: f64,
    pub eps: f64,
}

#[derive(Clone, Debug)]
pub struct Adam<T: Real> {
    pub config: AdamConfig,
    /// Number of updates applied so far.
    pub t: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(config: AdamConfig, params: &ParamStore<T>) -> Self {
        let zeros = || params.iter().map(|(_, _, v)| Tensor::zeros(v.shape())).collect::<Vec<_>>();
        Self { config, t: 0, m: zeros(), v: zeros() }
    }

    /// Applies one update; `None` gradients count as zero.
    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &[Option<Tensor<T>>]) {
        assert_eq!(grads.len(), params.len(), "one gradient slot per parameter");
        self.t += 1;
        let AdamConfig { lr, beta0, beta1, eps } = self.config;
        let t = self.t as i32;
        let c0 = 1.0 - libm::pow(beta0, t as f64);
        let c1 = 1.0 - libm::pow(beta1, t as f64);
        let (b0, b1) = (T::from_f64(beta0), T::from_f64(beta1));
        let (one_b0, one_b1) = (T::from_f64(1.0 - beta0), T::from_f64(1.0 - beta1));
        let step = T::from_f64(lr / c0);
        let inv_c1 = T::from_f64(1.0 / c1);
        let eps = T::from_f64(eps);
        for (i, id) in params.ids().collect::<Vec<_>>().into_iter().enumerate() {
            let zeros;
            let g: &[T] = match &grads[i] {
                Some(g) => g.data(),
                None => {
                    zeros = vec![T::zero(); self.m[i].numel()];
                    &zeros
                }
            };
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            let p = params.get_mut(id).data_mut();
            for (((p, m), v), &g) in p.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()).zip(g) {
                *m = b0 * *m + one_b0 * g;
                *v = b1 * *v + one_b1 * g * g;
                *p -= step * *m / ((*v * inv_c1).sqrt() + eps);
            }
        }
    }
}
