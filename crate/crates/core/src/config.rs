//! Model and training configuration, including the ablation presets.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Layout of the image feature mapper.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapperVariant {
    /// Two stride-2 convs, self-attention, two stride-2 transposed convs.
    Ead,
    /// Linear projection, three stride-1 convs, self-attention, skip, identity decoder.
    Ea,
    /// `Ead` without the attention block.
    EdOnly,
    /// Linear projection followed by attention at full resolution.
    AOnly,
    /// A single 3x3 stride-1 convolution.
    EOnly,
    /// A single per-pixel linear layer.
    LinearF,
}

/// What is stacked into the generator input.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InputMode {
    /// `[LR(t); HR(t')]`.
    Standard,
    /// `[LR(t); 0]`.
    NoHrRef,
    /// `[LR(t); HR(t'); LR(t_1) .. LR(t_extra)]`.
    MultiLr { extra: usize },
}

impl InputMode {
    pub fn extra_lr(&self) -> usize {
        match self {
            InputMode::MultiLr { extra } => *extra,
            _ => 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Spectral bands per image.
    pub channels: usize,
    /// Full image side `H = W`.
    pub image_size: usize,
    pub variant: MapperVariant,
    pub c_fea: usize,
    /// Mapping network depth.
    pub mapping_layers: usize,
    /// Number of modulated fully-connected layers.
    pub modfc_layers: usize,
    /// Width of the modulated layers.
    pub hidden: usize,
    pub z_dim: usize,
    /// `false` replaces the pixel synthesizer with a direct per-pixel head.
    pub synthesizer: bool,
    /// `false` zeroes the time input of the Fourier features.
    pub use_time: bool,
    pub input_mode: InputMode,
    pub demodulate: bool,
    /// Discriminator channels at full resolution, doubled per stage.
    pub disc_base_channels: usize,
    pub disc_max_channels: usize,
    /// Whether the discriminator's coordinate grid carries `t / u`.
    pub disc_uses_time: bool,
    /// Patch side for patch training and sliding-window inference.
    pub patch_size: Option<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::paper()
    }
}

impl ModelConfig {
    /// Full-size configuration: `H = 256`, `C_fea = 256`, `m = 3`, `n = 14`.
    pub fn paper() -> Self {
        Self {
            channels: 3,
            image_size: 256,
            variant: MapperVariant::Ead,
            c_fea: 256,
            mapping_layers: 3,
            modfc_layers: 14,
            hidden: 512,
            z_dim: 512,
            synthesizer: true,
            use_time: true,
            input_mode: InputMode::Standard,
            demodulate: true,
            disc_base_channels: 64,
            disc_max_channels: 512,
            disc_uses_time: true,
            patch_size: None,
        }
    }

    /// Small configuration that trains on one CPU core.
    pub fn desk() -> Self {
        Self {
            image_size: 64,
            c_fea: 32,
            hidden: 32,
            z_dim: 64,
            disc_base_channels: 8,
            disc_max_channels: 32,
            ..Self::paper()
        }
    }

    pub fn input_channels(&self) -> usize {
        2 * self.channels + self.channels * self.input_mode.extra_lr()
    }

    /// Side of the square window the networks see during training.
    pub fn train_size(&self) -> usize {
        self.patch_size.unwrap_or(self.image_size)
    }

    pub fn num_output_heads(&self) -> usize {
        self.modfc_layers / 2
    }

    /// Residual stages in the discriminator for a `size x size` input.
    pub fn disc_stages(size: usize) -> usize {
        (size.trailing_zeros() as usize).saturating_sub(2)
    }

    /// Checks every field and reports all problems at once.
    pub fn validate(&self) -> Result<()> {
        let mut bad: Vec<String> = Vec::new();
        let h = self.image_size;
        if self.channels == 0 {
            bad.push("model.channels must be >= 1".into());
        }
        if h < 8 || !h.is_power_of_two() {
            bad.push(format!("model.image_size must be a power of two >= 8, got {h}"));
        }
        if self.c_fea == 0 || self.c_fea % 8 != 0 {
            bad.push(format!("model.c_fea must be a positive multiple of 8, got {}", self.c_fea));
        }
        if self.mapping_layers == 0 {
            bad.push("model.mapping_layers must be >= 1".into());
        }
        if self.synthesizer && (self.modfc_layers < 2 || self.modfc_layers % 2 != 0) {
            bad.push(format!("model.modfc_layers must be even and >= 2, got {}", self.modfc_layers));
        }
        if self.hidden == 0 {
            bad.push("model.hidden must be >= 1".into());
        }
        if self.z_dim == 0 {
            bad.push("model.z_dim must be >= 1".into());
        }
        if self.disc_base_channels == 0 || self.disc_max_channels < self.disc_base_channels {
            bad.push("model.disc_base_channels must be >= 1 and <= disc_max_channels".into());
        }
        if let Some(s) = self.patch_size {
            if s < 8 || s > h || h % s != 0 || s % 4 != 0 || !s.is_power_of_two() {
                bad.push(format!("model.patch_size must be a power of two >= 8 dividing image_size {h}, got {s}"));
            }
        }
        let s = self.train_size();
        if matches!(self.variant, MapperVariant::Ead | MapperVariant::EdOnly) && s % 4 != 0 {
            bad.push(format!("model.variant {:?} needs a window divisible by 4, got {s}", self.variant));
        }
        if let InputMode::MultiLr { extra } = self.input_mode {
            if extra == 0 {
                bad.push("model.input_mode.extra must be >= 1 for multi_lr".into());
            }
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad))
        }
    }
}

/// Named configurations from the ablation grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Preset {
    #[serde(rename = "ead")]
    Ead,
    #[serde(rename = "ea64")]
    Ea64,
    #[serde(rename = "ea32")]
    Ea32,
    #[serde(rename = "no-gp")]
    NoGp,
    #[serde(rename = "linear-f")]
    LinearF,
    #[serde(rename = "e-only")]
    EOnly,
    #[serde(rename = "ed-only")]
    EdOnly,
    #[serde(rename = "a-only")]
    AOnly,
    #[serde(rename = "no-time")]
    NoTime,
    #[serde(rename = "multi-lr")]
    MultiLr,
    #[serde(rename = "no-hr-ref")]
    NoHrRef,
}

impl Preset {
    pub const ALL: [Preset; 11] = [
        Preset::Ead,
        Preset::Ea64,
        Preset::Ea32,
        Preset::NoGp,
        Preset::LinearF,
        Preset::EOnly,
        Preset::EdOnly,
        Preset::AOnly,
        Preset::NoTime,
        Preset::MultiLr,
        Preset::NoHrRef,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Ead => "ead",
            Preset::Ea64 => "ea64",
            Preset::Ea32 => "ea32",
            Preset::NoGp => "no-gp",
            Preset::LinearF => "linear-f",
            Preset::EOnly => "e-only",
            Preset::EdOnly => "ed-only",
            Preset::AOnly => "a-only",
            Preset::NoTime => "no-time",
            Preset::MultiLr => "multi-lr",
            Preset::NoHrRef => "no-hr-ref",
        }
    }

    /// Applies the preset on top of `base`, keeping its sizes.
    ///
    /// Patch sides are capped at the image size so presets also work on small
    /// images.
    pub fn apply(self, base: &ModelConfig) -> ModelConfig {
        let h = base.image_size;
        let patch = |s: usize| Some(s.min(h));
        let mut cfg = ModelConfig {
            variant: MapperVariant::Ead,
            patch_size: None,
            synthesizer: true,
            use_time: true,
            input_mode: InputMode::Standard,
            ..base.clone()
        };
        match self {
            Preset::Ead => {}
            Preset::Ea64 => {
                cfg.variant = MapperVariant::Ea;
                cfg.patch_size = patch(64);
            }
            Preset::Ea32 => {
                cfg.variant = MapperVariant::Ea;
                cfg.patch_size = patch(32);
            }
            Preset::NoGp => cfg.synthesizer = false,
            Preset::LinearF => cfg.variant = MapperVariant::LinearF,
            Preset::EOnly => cfg.variant = MapperVariant::EOnly,
            Preset::EdOnly => cfg.variant = MapperVariant::EdOnly,
            Preset::AOnly => {
                cfg.variant = MapperVariant::AOnly;
                cfg.patch_size = patch(64);
            }
            Preset::NoTime => {
                cfg.variant = MapperVariant::Ea;
                cfg.patch_size = patch(64);
                cfg.use_time = false;
            }
            Preset::MultiLr => cfg.input_mode = InputMode::MultiLr { extra: 2 },
            Preset::NoHrRef => cfg.input_mode = InputMode::NoHrRef,
        }
        cfg
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .iter()
            .copied()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown preset '{s}'")))
    }
}

/// Optimizer and schedule settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Weight of the L1 reconstruction term.
    pub lambda_l1: f64,
    pub learning_rate: f64,
    pub beta0: f64,
    pub beta1: f64,
    pub epsilon: f64,
    pub r1_weight: f64,
    /// R1 is evaluated on steps divisible by this and scaled by it.
    pub r1_every: u64,
    pub batch_size: usize,
    pub total_steps: u64,
    pub seed: u64,
    pub checkpoint_every: u64,
    pub log_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda_l1: 100.0,
            learning_rate: 2e-3,
            beta0: 0.0,
            beta1: 0.99,
            epsilon: 1e-8,
            r1_weight: 10.0,
            r1_every: 16,
            batch_size: 8,
            total_steps: 2000,
            seed: 0,
            checkpoint_every: 500,
            log_every: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let mut bad: Vec<String> = Vec::new();
        if !(self.lambda_l1 >= 0.0) {
            bad.push(format!("train.lambda_l1 must be >= 0, got {}", self.lambda_l1));
        }
        if !(self.learning_rate > 0.0) {
            bad.push(format!("train.learning_rate must be > 0, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.beta0) || !(0.0..1.0).contains(&self.beta1) {
            bad.push("train.beta0 and train.beta1 must lie in [0, 1)".into());
        }
        if !(self.epsilon > 0.0) {
            bad.push("train.epsilon must be > 0".into());
        }
        if !(self.r1_weight >= 0.0) {
            bad.push("train.r1_weight must be >= 0".into());
        }
        if self.r1_every == 0 {
            bad.push("train.r1_every must be >= 1".into());
        }
        if self.batch_size == 0 {
            bad.push("train.batch_size must be >= 1".into());
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_defaults() {
        let cfg = ModelConfig::paper();
        assert_eq!((cfg.image_size, cfg.c_fea, cfg.mapping_layers, cfg.modfc_layers), (256, 256, 3, 14));
        assert_eq!(cfg.num_output_heads(), 7);
        assert_eq!(cfg.input_channels(), 6);
        let t = TrainConfig::default();
        assert_eq!((t.lambda_l1, t.learning_rate, t.beta0, t.beta1, t.epsilon), (100.0, 2e-3, 0.0, 0.99, 1e-8));
    }

    #[test]
    fn every_preset_validates_at_both_scales() {
        for base in [ModelConfig::paper(), ModelConfig::desk()] {
            for p in Preset::ALL {
                p.apply(&base).validate().unwrap_or_else(|e| panic!("{p}: {e}"));
            }
        }
    }

    #[test]
    fn preset_names_round_trip() {
        for p in Preset::ALL {
            assert_eq!(p.name().parse::<Preset>().unwrap(), p);
        }
        assert!("ead2".parse::<Preset>().is_err());
    }

    #[test]
    fn validation_lists_every_problem() {
        let cfg = ModelConfig { c_fea: 12, modfc_layers: 3, image_size: 48, ..ModelConfig::desk() };
        match cfg.validate() {
            Err(Error::Config(list)) => assert!(list.len() >= 3, "{list:?}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn disc_stage_count() {
        assert_eq!(ModelConfig::disc_stages(256), 6);
        assert_eq!(ModelConfig::disc_stages(64), 4);
    }

    #[test]
    fn multi_lr_channels() {
        let cfg = Preset::MultiLr.apply(&ModelConfig::paper());
        assert_eq!(cfg.input_channels(), 12);
    }
}
