//! Knowledge-distillation laboratory built around generative denoise
//! distillation: the student's intermediate feature is aligned to the
//! teacher's channel count, perturbed with Gaussian noise, passed through a
//! small convolutional generator and matched to the teacher feature with a
//! channel-wise tempered-softmax KL divergence.
//!
//! Everything runs on a small from-scratch tensor engine ([`autodiff`]) so
//! the whole pipeline, from dataset synthesis to mIoU, is deterministic for a
//! given seed.

pub mod autodiff;
pub mod distill;
pub mod error;
pub mod harness;
mod io;
pub mod nn;
pub mod rng;
pub mod synth;

pub use autodiff::{Tape, Tensor};
pub use error::{Error, Result};
pub use rng::Rng;
