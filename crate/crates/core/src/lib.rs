//! Dual-stream fusion image classifier built on a small reverse-mode
//! autodiff engine.
//!
//! Two convolutional backbones see the same image; their feature maps are
//! concatenated along channels and passed through a modulated deformable
//! 3×3 convolution whose sampling offsets and modulation weights are
//! predicted from the fused map. The pooled result is flattened into an
//! affine classifier. Training combines hard-label cross-entropy with a
//! temperature-scaled KL term against a convex mixture of two teachers'
//! logits, Adam with a cosine schedule, and gradient accumulation.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autograd;
pub mod config;
pub mod data;
pub mod deform;
pub mod distill;
pub mod embed;
pub mod error;
pub mod gradcheck;
pub mod model;
pub mod optim;
pub mod tensor;
pub mod train;

pub use autograd::{Grads, Tape, Var};
pub use error::{Error, Result};
pub use tensor::{Real, Tensor};
