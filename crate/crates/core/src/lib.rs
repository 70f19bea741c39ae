//! Physical-layer analysis of chirp spread spectrum backscatter with
//! quantized tag phases.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analytic;
pub mod channel;
pub mod decoder;
pub mod error;
pub mod harness;
pub mod specfun;
pub mod spectral;
pub mod waveform;

pub use error::{Error, Result};
