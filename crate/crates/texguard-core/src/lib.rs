//! Texture-guided proactive image protection at desk scale.
//!
//! The crate is `no_std` + `alloc`: every stage is a pure function of its
//! inputs, so the whole pipeline (texture extraction, attention maps,
//! perturbation enhancement, surrogate editing, metrics) runs anywhere an
//! allocator exists. IO, file formats, and the CLI live in the companion
//! `texguard` crate.
//!
//! The pipeline in one breath: an input image is split into a texture branch
//! (grayscale -> bilateral filter -> conv stack -> LBP codes) and an
//! attention branch (Grad-CAM over a small convolutional classifier). A
//! trained enhancement head fuses the two into a bounded perturbation that,
//! once added to the image, makes a differentiable surrogate editor produce
//! visibly corrupted output while the protected image itself stays close to
//! the original.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod attention;
pub mod error;
pub mod gradcheck;
pub mod image;
pub mod metrics;
pub mod nn;
pub mod optim;
pub mod params;
pub mod perturb;
pub mod rng;
pub mod scalar;
pub mod surrogate;
pub mod tape;
pub mod tensor;
pub mod texture;

pub mod ops;

pub use error::CoreError;
pub use image::Image;
pub use params::ModelParams;
pub use scalar::Scalar;
pub use tape::{NodeId, Tape};
pub use tensor::Tensor;
