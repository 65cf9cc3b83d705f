//! Meta-learned LDR to HDR reconstruction.
//!
//! A `no_std` (alloc) core holding a higher-order reverse-mode autodiff engine,
//! a configurable UNet, the ExpandNet loss with SSIM/PSNR metrics, the
//! exposure and Radiance RGBE image math, and the MAML inner/outer loops.
//! File IO and the command line live in the `metahdr` crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod data;
pub mod gradcheck;
pub mod image;
pub mod loss;
pub mod meta;
pub mod scalar;
pub mod tensor;
pub mod unet;

pub use scalar::{DType, Real};
pub use tensor::{backward, fd_gradient, Gradients, Shape, Tensor, TensorError};
