//! Desk-scale two-view self-supervised pretraining where one block of the
//! representation is pulled toward augmentation invariance and the other block
//! is trained to reconstruct intermediate transformed images, plus a synthetic
//! evaluation that regresses transformation parameters from frozen features.
//!
//! The crate is self-contained: it ships its own dense-tensor reverse-mode
//! autodiff, a small pre-norm transformer encoder with convolutional decoders,
//! the transformation/augmentation pipeline, the trainer, the evaluation
//! probes, and a deterministic procedural dataset generator.

pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod image;
pub mod loss;
pub mod model;
pub mod rng;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
