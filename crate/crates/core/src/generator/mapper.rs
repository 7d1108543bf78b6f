//! Image feature mapper: encoder, self-attention and decoder variants.

use alloc::vec::Vec;

use rand::Rng;

use crate::autograd::Var;
use crate::config::MapperVariant;
use crate::error::{invalid, Result};
use crate::nn::{Bound, Conv2d, ConvTranspose2d, Linear, ParamId, ParamStore};
use crate::real::Real;
use crate::tensor::{dims4, Tensor};

/// Non-local block on `[B, C, H, W]` maps: `gamma * attn(x) + x`.
#[derive(Clone, Debug)]
pub struct SelfAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub gamma: ParamId,
    pub channels: usize,
}

impl SelfAttention {
    pub fn new<T: Real, R: Rng + ?Sized>(store: &mut ParamStore<T>, rng: &mut R, name: &str, channels: usize) -> Result<Self> {
        if channels == 0 || channels % 8 != 0 {
            return Err(invalid!("attention channels must be a positive multiple of 8, got {channels}"));
        }
        let qk = channels / 8;
        Ok(Self {
            query: Linear::new(store, rng, &alloc::format!("{name}.query"), channels, qk, true),
            key: Linear::new(store, rng, &alloc::format!("{name}.key"), channels, qk, true),
            value: Linear::new(store, rng, &alloc::format!("{name}.value"), channels, channels, true),
            gamma: store.add(&alloc::format!("{name}.gamma"), Tensor::zeros(&[1])),
            channels,
        })
    }

    /// Attention weights `[B, N_out, N_in]`; each row sums to one.
    pub fn weights<T: Real>(&self, p: &Bound<T>, x: &Var<T>) -> Var<T> {
        let (b, c, h, w) = dims4(x.shape());
        let flat = x.reshape(&[b, c, h * w]);
        let q = self.query.forward(p, &flat);
        let k = self.key.forward(p, &flat);
        Var::bmm(&q, &k, true, false).softmax_last()
    }

    pub fn forward<T: Real>(&self, p: &Bound<T>, x: &Var<T>) -> Var<T> {
        let (b, c, h, w) = dims4(x.shape());
        let flat = x.reshape(&[b, c, h * w]);
        let attn = self.weights(p, x);
        let v = self.value.forward(p, &flat);
        let o = Var::bmm(&v, &attn, false, true).reshape(&[b, c, h, w]);
        o.mul_bcast(&p.get(self.gamma).reshape(&[1, 1, 1, 1])).add(x)
    }
}

#[derive(Clone, Debug)]
enum Layers {
    Ead { enc: [Conv2d; 2], attn: Option<SelfAttention>, dec: [ConvTranspose2d; 2] },
    Ea { proj: Linear, convs: [Conv2d; 3], attn: SelfAttention },
    AOnly { proj: Linear, attn: SelfAttention },
    EOnly { conv: Conv2d },
    LinearF { proj: Linear },
}

/// Maps `[B, C_in, H, W]` inputs to `[B, C_fea, H, W]` per-pixel features.
#[derive(Clone, Debug)]
pub struct FeatureMapper {
    pub variant: MapperVariant,
    pub in_channels: usize,
    pub c_fea: usize,
    layers: Layers,
}

/// Shapes observed during one mapper pass.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct MapperTrace {
    /// Shape entering the attention block (or the bottleneck when absent).
    pub bottleneck: Vec<usize>,
    pub output: Vec<usize>,
}

impl FeatureMapper {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        variant: MapperVariant,
        in_channels: usize,
        c_fea: usize,
    ) -> Result<Self> {
        let layers = match variant {
            MapperVariant::Ead | MapperVariant::EdOnly => Layers::Ead {
                enc: [
                    Conv2d::new(store, rng, "g.mapper.enc0", in_channels, c_fea, 3, 2, true),
                    Conv2d::new(store, rng, "g.mapper.enc1", c_fea, c_fea, 3, 2, true),
                ],
                attn: match variant {
                    MapperVariant::Ead => Some(SelfAttention::new(store, rng, "g.mapper.attn", c_fea)?),
                    _ => None,
                },
                dec: [
                    ConvTranspose2d::new(store, rng, "g.mapper.dec0", c_fea, c_fea),
                    ConvTranspose2d::new(store, rng, "g.mapper.dec1", c_fea, c_fea),
                ],
            },
            MapperVariant::Ea => Layers::Ea {
                proj: Linear::new(store, rng, "g.mapper.proj", in_channels, c_fea, true),
                convs: [
                    Conv2d::new(store, rng, "g.mapper.conv0", c_fea, c_fea, 3, 1, true),
                    Conv2d::new(store, rng, "g.mapper.conv1", c_fea, c_fea, 3, 1, true),
                    Conv2d::new(store, rng, "g.mapper.conv2", c_fea, c_fea, 3, 1, true),
                ],
                attn: SelfAttention::new(store, rng, "g.mapper.attn", c_fea)?,
            },
            MapperVariant::AOnly => Layers::AOnly {
                proj: Linear::new(store, rng, "g.mapper.proj", in_channels, c_fea, true),
                attn: SelfAttention::new(store, rng, "g.mapper.attn", c_fea)?,
            },
            MapperVariant::EOnly => Layers::EOnly { conv: Conv2d::new(store, rng, "g.mapper.conv0", in_channels, c_fea, 3, 1, true) },
            MapperVariant::LinearF => Layers::LinearF { proj: Linear::new(store, rng, "g.mapper.proj", in_channels, c_fea, true) },
        };
        Ok(Self { variant, in_channels, c_fea, layers })
    }

    pub fn attention(&self) -> Option<&SelfAttention> {
        match &self.layers {
            Layers::Ead { attn, .. } => attn.as_ref(),
            Layers::Ea { attn, .. } | Layers::AOnly { attn, .. } => Some(attn),
            _ => None,
        }
    }

    /// Parameters of the stride-1 convolutions (EA) for tests that zero them.
    pub fn ea_convs(&self) -> Option<&[Conv2d; 3]> {
        match &self.layers {
            Layers::Ea { convs, .. } => Some(convs),
            _ => None,
        }
    }

    pub fn ea_projection(&self) -> Option<&Linear> {
        match &self.layers {
            Layers::Ea { proj, .. } => Some(proj),
            _ => None,
        }
    }

    pub fn check_input(&self, shape: &[usize]) -> Result<()> {
        if shape.len() != 4 || shape[1] != self.in_channels {
            return Err(invalid!("feature mapper expects [B, {}, H, W], got {shape:?}", self.in_channels));
        }
        if matches!(self.variant, MapperVariant::Ead | MapperVariant::EdOnly) && (shape[2] % 4 != 0 || shape[3] % 4 != 0) {
            return Err(invalid!("{:?} needs H and W divisible by 4, got {}x{}", self.variant, shape[2], shape[3]));
        }
        Ok(())
    }

    pub fn forward<T: Real>(&self, p: &Bound<T>, x: &Var<T>) -> Result<Var<T>> {
        self.forward_traced(p, x).map(|(y, _)| y)
    }

    pub fn forward_traced<T: Real>(&self, p: &Bound<T>, x: &Var<T>) -> Result<(Var<T>, MapperTrace)> {
        self.check_input(x.shape())?;
        let (b, _, h, w) = dims4(x.shape());
        let per_pixel = |lin: &Linear, x: &Var<T>| lin.forward(p, &x.reshape(&[b, self.in_channels, h * w])).reshape(&[b, self.c_fea, h, w]);
        let mut trace = MapperTrace::default();
        let y = match &self.layers {
            Layers::Ead { enc, attn, dec } => {
                let mut y = x.clone();
                for conv in enc {
                    y = conv.forward_lrelu(p, &y);
                }
                trace.bottleneck = y.shape().to_vec();
                if let Some(attn) = attn {
                    y = attn.forward(p, &y);
                }
                for tconv in dec {
                    y = tconv.forward_lrelu(p, &y);
                }
                y
            }
            Layers::Ea { proj, convs, attn } => {
                let skip = per_pixel(proj, x);
                let mut y = skip.clone();
                for conv in convs {
                    y = conv.forward_lrelu(p, &y);
                }
                trace.bottleneck = y.shape().to_vec();
                attn.forward(p, &y).add(&skip)
            }
            Layers::AOnly { proj, attn } => {
                let y = per_pixel(proj, x);
                trace.bottleneck = y.shape().to_vec();
                attn.forward(p, &y)
            }
            Layers::EOnly { conv } => {
                let y = conv.forward_lrelu(p, x);
                trace.bottleneck = y.shape().to_vec();
                y
            }
            Layers::LinearF { proj } => {
                let y = per_pixel(proj, x);
                trace.bottleneck = y.shape().to_vec();
                y
            }
        };
        trace.output = y.shape().to_vec();
        Ok((y, trace))
    }
}
