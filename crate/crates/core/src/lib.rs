//! Meta-learned instance detection for single-object tracking.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`] and [`autodiff`]: dense tensors and a reverse-mode engine
//!   whose gradients are differentiable again.
//! * [`detector`]: a small convolutional detector with anchor-based and
//!   anchor-free heads, label assignment, losses and box decoding.
//! * [`meta`]: inner-loop gradient descent with per-kernel learnable rates,
//!   the multi-step outer loss and the outer Adam loop.
//! * [`synth`]: deterministic synthetic tracking videos and task sampling.
//! * [`tracker`]: the online tracking loop with support-set maintenance.
//! * [`eval`]: one-pass evaluation metrics and adaptation experiments.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the precision.

pub mod autodiff;
pub mod detector;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod kernels;
pub mod keyvalue;
pub mod meta;
pub mod rng;
pub mod scalar;
pub mod synth;
pub mod tensor;
pub mod tracker;

pub use autodiff::{Graph, Var};
pub use error::{Error, Result};
pub use geometry::BoundingBox;
pub use scalar::{Precision, Scalar};
pub use tensor::Tensor;

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type ParamSet32 = detector::ParamSet<f32>;
pub type ParamSet64 = detector::ParamSet<f64>;
pub type Sequence32 = synth::Sequence<f32>;
pub type Sequence64 = synth::Sequence<f64>;
