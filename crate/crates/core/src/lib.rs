//! Patch-based diffeomorphic 2D image registration.
//!
//! This crate carries the numerical core and is `no_std` (it needs `alloc`):
//!
//! - [`gradcore`]: a small reverse-mode differentiation tape with exactly the
//!   kernels the networks need, plus a finite-difference gradient checker.
//! - [`svf`]: stationary velocity fields, scaling-and-squaring integration,
//!   bilinear warping, flow resampling and Jacobian determinants.
//! - [`blocks`]: patch embedding, MLP block, MLP-Mixer block and the shifted
//!   window cross-attention block.
//! - [`models`]: the PureMLP, MLPMixer and SwinTrans registration networks,
//!   single- and multi-scale.
//! - [`training`]: symmetric loss, diffusion regularizer, Adam and pair
//!   augmentation.
//! - [`metrics`]: Dice, Hausdorff / mean surface distance and Jacobian
//!   statistics.
//! - [`synth`]: procedural echo-like image pairs with known deformation.
//!
//! File formats, the training loop and the command line live in the
//! companion `patchreg` crate.
#![no_std]

extern crate alloc;

pub mod blocks;
pub mod error;
pub mod gradcore;
pub mod image;
pub mod metrics;
pub mod models;
pub mod real;
pub mod svf;
pub mod synth;
pub mod training;

pub use error::{Error, Result};
pub use gradcore::{GradCheckReport, ParamSet, Shape, Tape, Tensor};
pub use image::{Image, LabelMask};

pub use models::{Family, Model, ModelConfig, RegistrationResult, ScaleConfig};
pub use real::Real;
pub use svf::{FieldKind, VectorField};
