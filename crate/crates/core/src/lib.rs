//! Conditional pixel-synthesis generator for paired low/high resolution
//! image time series, with its training objective and patch inference.
//!
//! The crate is `no_std` (with `alloc`) when built without the default
//! `std` feature.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod autograd;
pub mod config;
pub mod data;
pub mod discriminator;
pub mod error;
pub mod generator;
pub mod gradcheck;
pub mod inference;
pub mod nn;
pub mod optim;
pub mod real;
pub mod tensor;
pub mod training;

pub use config::{InputMode, MapperVariant, ModelConfig, Preset, TrainConfig};
pub use error::{Error, Result};
