//! Style mapping network and the modulated per-pixel perceptron.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use crate::autograd::Var;
use crate::error::{invalid, Result};
use crate::nn::{Bound, Linear, ParamStore};
use crate::real::{c, Real};

pub const DEMOD_EPS: f64 = 1e-8;
const MAPPING_LR_MUL: f64 = 0.01;

/// `z -> w`: pixel norm followed by fully-connected layers with LeakyReLU.
#[derive(Clone, Debug)]
pub struct MappingNetwork {
    pub layers: Vec<Linear>,
    pub z_dim: usize,
}

impl MappingNetwork {
    pub fn new<T: Real, R: Rng + ?Sized>(store: &mut ParamStore<T>, rng: &mut R, z_dim: usize, depth: usize) -> Self {
        let layers = (0..depth)
            .map(|i| Linear::with_lr_mul(store, rng, &format!("g.mapping.fc{i}"), z_dim, z_dim, true, MAPPING_LR_MUL, 0.0))
            .collect();
        Self { layers, z_dim }
    }

    pub fn forward<T: Real>(&self, p: &Bound<T>, z: &Var<T>) -> Result<Var<T>> {
        if z.shape().len() != 2 || z.shape()[1] != self.z_dim {
            return Err(invalid!("style noise must be [B, {}], got {:?}", self.z_dim, z.shape()));
        }
        let b = z.shape()[0];
        let norm = z.square().sum_axis(1).scale(c(1.0 / self.z_dim as f64)).add_scalar(c(1e-8)).powf(c(-0.5));
        let mut w = z.mul_bcast(&norm.reshape(&[b, 1]));
        for layer in &self.layers {
            w = layer.forward_lrelu(p, &w.reshape(&[b, self.z_dim, 1])).reshape(&[b, self.z_dim]);
        }
        Ok(w)
    }
}

/// Fully-connected layer whose input channels are scaled per sample by a
/// style-derived vector, optionally renormalized per output unit.
#[derive(Clone, Debug)]
pub struct ModFc {
    pub affine: Linear,
    pub linear: Linear,
    pub demodulate: bool,
    pub activate: bool,
}

impl ModFc {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        in_features: usize,
        out_features: usize,
        w_dim: usize,
        demodulate: bool,
        activate: bool,
    ) -> Self {
        Self {
            affine: Linear::with_lr_mul(store, rng, &format!("{name}.affine"), w_dim, in_features, true, 1.0, 1.0),
            linear: Linear::new(store, rng, name, in_features, out_features, true),
            demodulate,
            activate,
        }
    }

    /// Style scales `[B, in]`.
    pub fn styles<T: Real>(&self, p: &Bound<T>, w: &Var<T>) -> Var<T> {
        self.affine.forward_vec(p, w)
    }

    /// Per-sample effective weights `[B, out, in]` for styles `s: [B, in]`.
    pub fn modulated_weight<T: Real>(&self, p: &Bound<T>, s: &Var<T>) -> Var<T> {
        let (b, cin, cout) = (s.shape()[0], self.linear.in_features, self.linear.out_features);
        let weight = self.linear.effective_weight(p).reshape(&[1, cout, cin]);
        let wm = weight.broadcast_to(&[b, cout, cin]).mul_bcast(&s.reshape(&[b, 1, cin]));
        if !self.demodulate {
            return wm;
        }
        let d = wm.square().sum_axis(2).add_scalar(c(DEMOD_EPS)).powf(c(-0.5));
        wm.mul_bcast(&d)
    }

    /// `x: [B, in, P]`, `s: [B, in]` -> `[B, out, P]`.
    pub fn forward_with_styles<T: Real>(&self, p: &Bound<T>, x: &Var<T>, s: &Var<T>) -> Var<T> {
        let y = Var::bmm(&self.modulated_weight(p, s), x, false, false);
        let slope = self.activate.then(|| c(crate::nn::LEAKY_SLOPE));
        match self.linear.effective_bias(p) {
            Some(bias) => y.bias_act(&bias, slope),
            None => match slope {
                Some(sl) => y.leaky_relu(sl),
                None => y,
            },
        }
    }

    pub fn forward<T: Real>(&self, p: &Bound<T>, x: &Var<T>, w: &Var<T>) -> Var<T> {
        self.forward_with_styles(p, x, &self.styles(p, w))
    }
}

/// ModFC stack with a to-output head after every second layer.
#[derive(Clone, Debug)]
pub struct Synthesizer {
    pub mapping: MappingNetwork,
    pub layers: Vec<ModFc>,
    pub heads: Vec<ModFc>,
}

impl Synthesizer {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        c_fea: usize,
        hidden: usize,
        out_channels: usize,
        z_dim: usize,
        mapping_layers: usize,
        modfc_layers: usize,
        demodulate: bool,
    ) -> Self {
        let mapping = MappingNetwork::new(store, rng, z_dim, mapping_layers);
        let mut layers = Vec::with_capacity(modfc_layers);
        let mut heads = Vec::with_capacity(modfc_layers / 2);
        for i in 0..modfc_layers {
            let cin = if i == 0 { c_fea } else { hidden };
            layers.push(ModFc::new(store, rng, &format!("g.synth.fc{i}"), cin, hidden, z_dim, demodulate, true));
            if i % 2 == 1 {
                heads.push(ModFc::new(store, rng, &format!("g.synth.out{}", i / 2), hidden, out_channels, z_dim, false, false));
            }
        }
        Self { mapping, layers, heads }
    }

    /// `e: [B, C_fea, P]`, `w: [B, Z]` -> (`[B, C, P]`, heads accumulated).
    pub fn forward<T: Real>(&self, p: &Bound<T>, e: &Var<T>, w: &Var<T>) -> (Var<T>, usize) {
        let mut h = e.clone();
        let mut out: Option<Var<T>> = None;
        let mut heads = 0;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(p, &h, w);
            if i % 2 == 1 {
                let y = self.heads[i / 2].forward(p, &h, w);
                out = Some(match out {
                    Some(acc) => acc.add(&y),
                    None => y,
                });
                heads += 1;
            }
        }
        (out.expect("synthesizer has at least one head"), heads)
    }
}
