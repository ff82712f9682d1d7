//! Core of a hierarchical recurrent encoder-decoder for audio-visual
//! scene-aware dialogue, with FiLM-conditioned video and audio encoders.
//!
//! Everything here is `no_std` with `alloc`: the autodiff tape, layers,
//! model, optimizer, decoding, metrics and a synthetic data generator. File
//! formats and the command line live in the companion `film-hred` crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod data;
pub mod decode;
pub mod encoders;
pub mod error;
pub mod gradcheck;
pub mod layers;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod sampler;
pub mod synth;
pub mod tape;
pub mod tensor;
pub mod train;
pub mod vocab;

pub use error::{Error, Result};
pub use tape::{Tape, Var};
pub use tensor::{ParamId, ParamSet, Shape, Tensor};
