//! Parameter storage and the equalized-learning-rate layers used by the
//! generator and discriminator.
//!
//! Weights are stored as unit-normal draws and rescaled by `1/sqrt(fan_in)`
//! at run time. Channel-wise layers operate on `[B, C, P]` tensors.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::autograd::Var;
use crate::real::{c, Real};
use crate::tensor::{ConvGeom, Tensor};

pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named, ordered parameter tensors.
#[derive(Clone, Debug)]
pub struct ParamStore<T: Real> {
    names: Vec<String>,
    values: Vec<Tensor<T>>,
}

impl<T: Real> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self { names: Vec::new(), values: Vec::new() }
    }

    pub fn add(&mut self, name: &str, value: Tensor<T>) -> ParamId {
        debug_assert!(!self.names.iter().any(|n| n == name), "duplicate parameter {name}");
        self.names.push(name.to_string());
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.values[id.0]
    }

    pub fn set(&mut self, id: ParamId, value: Tensor<T>) {
        assert_eq!(value.shape(), self.values[id.0].shape(), "shape change for {}", self.names[id.0]);
        self.values[id.0] = value;
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.values[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor<T>)> {
        self.names.iter().zip(&self.values).enumerate().map(|(i, (n, v))| (ParamId(i), n.as_str(), v))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|v| v.numel()).sum()
    }

    /// Wraps every parameter in a graph leaf (`trainable`) or a constant.
    pub fn bind(&self, trainable: bool) -> Bound<T> {
        let vars = self
            .values
            .iter()
            .map(|v| if trainable { Var::leaf(v.clone()) } else { Var::constant(v.clone()) })
            .collect();
        Bound { vars }
    }
}

/// Parameters bound into one forward pass.
pub struct Bound<T: Real> {
    vars: Vec<Var<T>>,
}

impl<T: Real> Bound<T> {
    /// Wraps externally created graph nodes, in parameter order.
    pub fn from_vars(vars: Vec<Var<T>>) -> Self {
        Self { vars }
    }

    pub fn get(&self, id: ParamId) -> &Var<T> {
        &self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var<T>] {
        &self.vars
    }

    pub fn refs(&self) -> Vec<&Var<T>> {
        self.vars.iter().collect()
    }
}

pub fn randn<T: Real, R: Rng + ?Sized>(rng: &mut R, shape: &[usize]) -> Tensor<T> {
    let n = shape.iter().product();
    let data = (0..n).map(|_| T::from_f64(rng.sample::<f64, _>(StandardNormal))).collect();
    Tensor::from_vec(shape, data)
}

fn equalized(fan_in: usize) -> f64 {
    1.0 / libm::sqrt(fan_in as f64)
}

/// Per-position fully-connected layer: `[B, in, P] -> [B, out, P]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_features: usize,
    pub out_features: usize,
    scale: f64,
}

impl Linear {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        in_features: usize,
        out_features: usize,
        bias: bool,
    ) -> Self {
        Self::with_lr_mul(store, rng, name, in_features, out_features, bias, 1.0, 0.0)
    }

    /// Equalized layer with a learning-rate multiplier and constant bias init.
    #[allow(clippy::too_many_arguments)]
    pub fn with_lr_mul<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        in_features: usize,
        out_features: usize,
        bias: bool,
        lr_mul: f64,
        bias_init: f64,
    ) -> Self {
        let w = randn::<T, _>(rng, &[out_features, in_features]).map(|v| v / c(lr_mul));
        let weight = store.add(&alloc::format!("{name}.weight"), w);
        let bias = bias.then(|| store.add(&alloc::format!("{name}.bias"), Tensor::full(&[out_features], c(bias_init / lr_mul))));
        Self { weight, bias, in_features, out_features, scale: equalized(in_features) * lr_mul }
    }

    /// Effective (runtime-scaled) weight, shape `[out, in]`.
    pub fn effective_weight<T: Real>(&self, p: &Bound<T>) -> Var<T> {
        p.get(self.weight).scale(c(self.scale))
    }

    pub fn effective_bias<T: Real>(&self, p: &Bound<T>) -> Option<Var<T>> {
        let lr_mul = self.scale / equalized(self.in_features);
        self.bias.map(|b| p.get(b).scale(c(lr_mul)))
    }

    pub fn forward<T: Real>(&self, p: &Bound<T>, x: &Var<T>) -> Var<T> {
        let (b, cin, n) = crate::tensor::dims3(x.shape());
        assert_eq!(cin, self.in_features, "linear expects {} input channels, got {cin}", self.in_features);
        let w = self.effective_weight(p).reshape(&[1, self.out_features, self.in_features]);
        let y = Var::bmm(&w, x, false, false);
        match self.effective_bias(p) {
            Some(bias) => y.bias_act(&bias, None),
            None => y,
        }
        .reshape(&[b, self.out_features, n])
    }

    /// `lrelu(forward(x))` with the bias and activation fused.
    pub fn forward_lrelu<T: Real>(&self, p: &Bound<T>, x: &Var<T>) -> Var<T> {
        let w = self.effective_weight(p).reshape(&[1, self.out_features, self.in_features]);
        let y = Var::bmm(&w, x, false, false);
        match self.effective_bias(p) {
            Some(bias) => y.bias_act(&bias, Some(c(LEAKY_SLOPE))),
            None => lrelu(&y),
        }
    }

    /// Applies the layer to plain vectors `[B, in] -> [B, out]`.
    pub fn forward_vec<T: Real>(&self, p: &Bound<T>, x: &Var<T>) -> Var<T> {
        let b = x.shape()[0];
        self.forward(p, &x.reshape(&[b, self.in_features, 1])).reshape(&[b, self.out_features])
    }
}

/// Square-kernel 2D convolution on `[B, C, H, W]`.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    scale: f64,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        bias: bool,
    ) -> Self {
        let fan_in = in_channels * kernel * kernel;
        let weight = store.add(&alloc::format!("{name}.weight"), randn(rng, &[out_channels, fan_in]));
        let bias = bias.then(|| store.add(&alloc::format!("{name}.bias"), Tensor::zeros(&[out_channels])));
        Self { weight, bias, in_channels, out_channels, kernel, stride, pad: kernel / 2, scale: equalized(fan_in) }
    }

    pub fn geometry(&self, h: usize, w: usize) -> ConvGeom {
        ConvGeom { in_h: h, in_w: w, kernel: self.kernel, stride: self.stride, pad: self.pad }
    }

    pub fn forward<T: Real>(&self, p: &Bound<T>, x: &Var<T>) -> Var<T> {
        self.apply(p, x, None)
    }

    pub fn forward_lrelu<T: Real>(&self, p: &Bound<T>, x: &Var<T>) -> Var<T> {
        self.apply(p, x, Some(c(LEAKY_SLOPE)))
    }

    fn apply<T: Real>(&self, p: &Bound<T>, x: &Var<T>, slope: Option<T>) -> Var<T> {
        let (b, cin, h, w) = crate::tensor::dims4(x.shape());
        assert_eq!(cin, self.in_channels, "conv expects {} channels, got {cin}", self.in_channels);
        let geom = self.geometry(h, w);
        let (oh, ow) = (geom.out_h(), geom.out_w());
        let cols = if self.kernel == 1 && self.stride == 1 {
            x.reshape(&[b, cin, h * w])
        } else {
            x.im2col(geom)
        };
        let wt = p.get(self.weight).scale(c(self.scale)).reshape(&[1, self.out_channels, cin * self.kernel * self.kernel]);
        let y = Var::bmm(&wt, &cols, false, false).reshape(&[b, self.out_channels, oh, ow]);
        match self.bias {
            Some(bias) => y.bias_act(p.get(bias), slope),
            None => match slope {
                Some(s) => y.leaky_relu(s),
                None => y,
            },
        }
    }
}

/// Stride-2, 3x3 transposed convolution doubling the spatial size.
#[derive(Clone, Debug)]
pub struct ConvTranspose2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_channels: usize,
    pub out_channels: usize,
    scale: f64,
}

impl ConvTranspose2d {
    pub const KERNEL: usize = 3;

    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        in_channels: usize,
        out_channels: usize,
    ) -> Self {
        let kk = Self::KERNEL * Self::KERNEL;
        let weight = store.add(&alloc::format!("{name}.weight"), randn(rng, &[in_channels, out_channels * kk]));
        let bias = store.add(&alloc::format!("{name}.bias"), Tensor::zeros(&[out_channels]));
        Self { weight, bias, in_channels, out_channels, scale: equalized(in_channels * kk) }
    }

    /// Transposed convolution followed by a leaky ReLU.
    pub fn forward_lrelu<T: Real>(&self, p: &Bound<T>, x: &Var<T>) -> Var<T> {
        let (b, cin, h, w) = crate::tensor::dims4(x.shape());
        assert_eq!(cin, self.in_channels, "transposed conv expects {} channels, got {cin}", self.in_channels);
        let kk = Self::KERNEL * Self::KERNEL;
        let wt = p.get(self.weight).scale(c(self.scale)).reshape(&[1, cin, self.out_channels * kk]);
        let cols = Var::bmm(&wt, &x.reshape(&[b, cin, h * w]), true, false);
        // The adjoint of a stride-2 pad-1 conv on the doubled grid.
        let geom = ConvGeom { in_h: 2 * h, in_w: 2 * w, kernel: Self::KERNEL, stride: 2, pad: 1 };
        cols.col2im(geom, self.out_channels).bias_act(p.get(self.bias), Some(c(LEAKY_SLOPE)))
    }
}

pub fn lrelu<T: Real>(x: &Var<T>) -> Var<T> {
    x.leaky_relu(c(LEAKY_SLOPE))
}
