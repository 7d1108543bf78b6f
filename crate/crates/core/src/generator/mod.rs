//! The conditional generator: feature mapper, positional encoder and
//! pixel synthesizer.

mod encoder;
mod mapper;
mod synth;

use alloc::rc::Rc;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::autograd::Var;
use crate::config::ModelConfig;
use crate::data::PatchSpec;
use crate::error::{invalid, Result};
use crate::nn::{Bound, Linear, ParamStore};
use crate::real::Real;
use crate::tensor::{dims4, Tensor};

pub use encoder::PositionalEncoder;
pub use mapper::{FeatureMapper, MapperTrace, SelfAttention};
pub use synth::{MappingNetwork, ModFc, Synthesizer, DEMOD_EPS};

/// What turns per-pixel features into output values.
#[derive(Clone, Debug)]
pub enum PixelHead {
    Synthesizer { encoder: PositionalEncoder, g_z: Linear, synth: Synthesizer },
    /// Direct per-pixel projection of the features (no synthesizer).
    Direct(Linear),
}

#[derive(Clone, Debug)]
pub struct Generator {
    pub config: ModelConfig,
    pub mapper: FeatureMapper,
    pub head: PixelHead,
}

/// Per-sample state shared by every pixel query of one forward pass.
pub struct Conditioning<T: Real> {
    /// `[B, C_fea, S * S]`, window-local row-major.
    pub features: Var<T>,
    pub windows: Vec<PatchSpec>,
    /// Normalized times.
    pub times: Vec<f64>,
    /// Style vectors `[B, Z]`, absent without a synthesizer.
    pub style: Option<Var<T>>,
}

impl<T: Real> Conditioning<T> {
    pub fn batch(&self) -> usize {
        self.windows.len()
    }

    pub fn window_size(&self) -> usize {
        self.windows[0].size
    }
}

/// Structure observed during one forward pass.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct GeneratorTrace {
    pub mapper: MapperTrace,
    pub heads: usize,
    pub encoding_dim: usize,
}

impl Generator {
    pub fn new<T: Real, R: Rng + ?Sized>(config: &ModelConfig, store: &mut ParamStore<T>, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mapper = FeatureMapper::new(store, rng, config.variant, config.input_channels(), config.c_fea)?;
        let head = if config.synthesizer {
            let n = config.image_size;
            let encoder = PositionalEncoder::new(store, rng, config.c_fea, n, n, config.use_time);
            let g_z = Linear::new(store, rng, "g.g_z", 2 * config.c_fea, config.c_fea, true);
            let synth = Synthesizer::new(
                store,
                rng,
                config.c_fea,
                config.hidden,
                config.channels,
                config.z_dim,
                config.mapping_layers,
                config.modfc_layers,
                config.demodulate,
            );
            PixelHead::Synthesizer { encoder, g_z, synth }
        } else {
            PixelHead::Direct(Linear::new(store, rng, "g.direct", config.c_fea, config.channels, true))
        };
        Ok(Self { config: config.clone(), mapper, head })
    }

    pub fn encoder(&self) -> Option<&PositionalEncoder> {
        match &self.head {
            PixelHead::Synthesizer { encoder, .. } => Some(encoder),
            PixelHead::Direct(_) => None,
        }
    }

    pub fn synthesizer(&self) -> Option<&Synthesizer> {
        match &self.head {
            PixelHead::Synthesizer { synth, .. } => Some(synth),
            PixelHead::Direct(_) => None,
        }
    }

    /// Unit-normal style noise `[batch, Z]`.
    pub fn sample_z<T: Real, R: Rng + ?Sized>(&self, rng: &mut R, batch: usize) -> Tensor<T> {
        let z = self.config.z_dim;
        Tensor::from_vec(&[batch, z], (0..batch * z).map(|_| T::from_f64(rng.sample::<f64, _>(StandardNormal))).collect())
    }

    pub fn map_style<T: Real>(&self, p: &Bound<T>, z: &Var<T>) -> Result<Option<Var<T>>> {
        match &self.head {
            PixelHead::Synthesizer { synth, .. } => synth.mapping.forward(p, z).map(Some),
            PixelHead::Direct(_) => Ok(None),
        }
    }

    /// Runs the feature mapper and the style mapping once per sample.
    ///
    /// `cat` is `[B, C_in, S, S]` cropped at `windows[b]`; `times` are
    /// normalized; `z` is `[B, Z]`.
    pub fn condition<T: Real>(
        &self,
        p: &Bound<T>,
        cat: &Var<T>,
        windows: &[PatchSpec],
        times: &[f64],
        z: &Var<T>,
    ) -> Result<Conditioning<T>> {
        self.condition_traced(p, cat, windows, times, z).map(|(c, _)| c)
    }

    fn condition_traced<T: Real>(
        &self,
        p: &Bound<T>,
        cat: &Var<T>,
        windows: &[PatchSpec],
        times: &[f64],
        z: &Var<T>,
    ) -> Result<(Conditioning<T>, MapperTrace)> {
        let shape = cat.shape();
        if shape.len() != 4 {
            return Err(invalid!("generator input must be [B, C, S, S], got {shape:?}"));
        }
        let (b, _, h, w) = dims4(shape);
        if windows.len() != b || times.len() != b || z.shape().first() != Some(&b) {
            return Err(invalid!("batch of {b} needs {b} windows, times and noise rows"));
        }
        let n = self.config.image_size;
        for win in windows {
            win.validate(n, n)?;
            if win.size != h || win.size != w {
                return Err(invalid!("window side {} does not match input {h}x{w}", win.size));
            }
        }
        let (features, trace) = self.mapper.forward_traced(p, cat)?;
        let features = features.reshape(&[b, self.config.c_fea, h * w]);
        let style = self.map_style(p, z)?;
        Ok((Conditioning { features, windows: windows.to_vec(), times: times.to_vec(), style }, trace))
    }

    /// Output values `[B, C, P]` for window-local pixels `local`
    /// (row-major indices inside the window), or every window pixel.
    pub fn synthesize<T: Real>(&self, p: &Bound<T>, cond: &Conditioning<T>, local: Option<&[usize]>) -> Result<Var<T>> {
        self.synthesize_traced(p, cond, local).map(|(y, _)| y)
    }

    fn synthesize_traced<T: Real>(
        &self,
        p: &Bound<T>,
        cond: &Conditioning<T>,
        local: Option<&[usize]>,
    ) -> Result<(Var<T>, GeneratorTrace)> {
        let s = cond.window_size();
        if let Some(idx) = local {
            if let Some(&bad) = idx.iter().find(|&&i| i >= s * s) {
                return Err(crate::error::Error::OutOfGrid { x: bad / s, y: bad % s, height: s, width: s });
            }
        }
        let feats = match local {
            Some(idx) => cond.features.index_select_last(&Rc::new(idx.to_vec())),
            None => cond.features.clone(),
        };
        let mut trace = GeneratorTrace::default();
        let out = match &self.head {
            PixelHead::Direct(lin) => lin.forward(p, &feats),
            PixelHead::Synthesizer { encoder, g_z, synth } => {
                let width = encoder.width;
                let pixels: Vec<Rc<Vec<usize>>> = cond
                    .windows
                    .iter()
                    .map(|win| {
                        let abs = |l: usize| (win.top + l / s) * width + win.left + l % s;
                        Rc::new(match local {
                            Some(idx) => idx.iter().map(|&l| abs(l)).collect(),
                            None => (0..s * s).map(abs).collect(),
                        })
                    })
                    .collect();
                let e = encoder.encode(p, &pixels, &cond.times)?;
                trace.encoding_dim = e.shape()[1];
                let e = g_z.forward(p, &e).add(&feats);
                let style = cond.style.as_ref().expect("synthesizer conditioning carries a style");
                let (y, heads) = synth.forward(p, &e, style);
                trace.heads = heads;
                y
            }
        };
        Ok((out, trace))
    }

    /// Full window forward: `[B, C_in, S, S]` -> `[B, C, S, S]`.
    pub fn forward<T: Real>(&self, p: &Bound<T>, cat: &Var<T>, windows: &[PatchSpec], times: &[f64], z: &Var<T>) -> Result<Var<T>> {
        self.forward_traced(p, cat, windows, times, z).map(|(y, _)| y)
    }

    pub fn forward_traced<T: Real>(
        &self,
        p: &Bound<T>,
        cat: &Var<T>,
        windows: &[PatchSpec],
        times: &[f64],
        z: &Var<T>,
    ) -> Result<(Var<T>, GeneratorTrace)> {
        let (cond, mapper_trace) = self.condition_traced(p, cat, windows, times, z)?;
        let (y, mut trace) = self.synthesize_traced(p, &cond, None)?;
        trace.mapper = mapper_trace;
        let (b, s) = (cond.batch(), cond.window_size());
        Ok((y.reshape(&[b, self.config.channels, s, s]), trace))
    }
}
