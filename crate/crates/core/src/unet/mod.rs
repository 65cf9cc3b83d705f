//! Encoder/decoder UNet with skip connections.
//!
//! Parameter names follow the block layout: `down{l}.conv1.weight`,
//! `down{l}.bn1.gamma`, ..., `bottom.up.weight`, `up{l}.conv2.bias`,
//! `top.out.weight`. Batch norm appears only in the contracting and bottom
//! blocks.

mod params;

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::scalar::Real;
use crate::tensor::{Tensor, TensorError};

pub use params::{grads_to_set, ParamEntry, ParamSet, ParamTensors, PARAM_MAGIC};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid network config: {0}")]
    Config(String),
    #[error("input {height}x{width} is not divisible by {multiple} (2^depth)")]
    Indivisible {
        height: usize,
        width: usize,
        multiple: usize,
    },
    #[error("no parameter named {0}")]
    MissingParam(String),
    #[error("parameter schema mismatch: {}", .0.join("; "))]
    Schema(Vec<String>),
    #[error("malformed parameter file: {0}")]
    Format(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UNetConfig {
    /// Number of contracting levels.
    pub depth: usize,
    /// Channels after the first block.
    pub base_channels: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    /// Batch-norm epsilon.
    pub eps: f64,
}

impl Default for UNetConfig {
    fn default() -> Self {
        UNetConfig {
            depth: 4,
            base_channels: 32,
            in_channels: 3,
            out_channels: 3,
            eps: 1e-5,
        }
    }
}

impl UNetConfig {
    /// Small network used for CPU-scale experiments.
    pub fn desk() -> Self {
        UNetConfig {
            depth: 2,
            base_channels: 8,
            ..UNetConfig::default()
        }
    }

    pub fn tiny() -> Self {
        UNetConfig {
            depth: 1,
            base_channels: 4,
            ..UNetConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::Config(m));
        if self.depth < 1 || self.depth > 12 {
            return bad(format!("depth must be in 1..=12, got {}", self.depth));
        }
        if self.base_channels < 4 || self.base_channels > 4096 {
            return bad(format!("base_channels must be in 4..=4096, got {}", self.base_channels));
        }
        if self.in_channels != 3 || self.out_channels != 3 {
            return bad(format!(
                "only 3 input and 3 output channels are supported, got {} and {}",
                self.in_channels, self.out_channels
            ));
        }
        if !(self.eps >= 0.0 && self.eps.is_finite()) {
            return bad(format!("eps must be finite and non-negative, got {}", self.eps));
        }
        Ok(())
    }

    /// Working width at contracting level `level`.
    pub fn width(&self, level: usize) -> usize {
        self.base_channels << level
    }

    /// Input width of contracting level `level`.
    pub fn contract_in(&self, level: usize) -> usize {
        if level == 0 {
            self.in_channels
        } else {
            self.width(level - 1)
        }
    }

    /// Spatial dims must be a multiple of this.
    pub fn required_multiple(&self) -> usize {
        1 << self.depth
    }
}

/// Network shape. `Identity` has no parameters and returns its input; it
/// exists so the evaluation protocol can be checked against the raw-LDR row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Architecture {
    UNet(UNetConfig),
    Identity,
}

impl Architecture {
    /// `(name, dims)` of every parameter tensor, in storage order.
    pub fn param_schema(&self) -> Vec<(String, Vec<usize>)> {
        params::schema(self).into_iter().map(|(n, d, _)| (n, d)).collect()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        match self {
            Architecture::UNet(c) => c.validate(),
            Architecture::Identity => Ok(()),
        }
    }

    pub fn check_input(&self, dims: &[usize]) -> Result<(), ModelError> {
        let Architecture::UNet(cfg) = self else {
            return Ok(());
        };
        let [_, c, h, w] = dims else {
            return Err(TensorError::InvalidShape {
                op: "unet",
                dims: dims.to_vec(),
                reason: "expected [N, C, H, W]".into(),
            }
            .into());
        };
        if *c != cfg.in_channels {
            return Err(ModelError::Config(format!(
                "network expects {} input channels, got {c}",
                cfg.in_channels
            )));
        }
        let m = cfg.required_multiple();
        if h % m != 0 || w % m != 0 || *h == 0 || *w == 0 {
            return Err(ModelError::Indivisible {
                height: *h,
                width: *w,
                multiple: m,
            });
        }
        Ok(())
    }
}

fn conv<T: Real>(x: &Tensor<T>, p: &ParamTensors<T>, prefix: &str) -> Result<Tensor<T>, ModelError> {
    let w = p.get(&format!("{prefix}.weight"))?;
    let b = p.get(&format!("{prefix}.bias"))?;
    Ok(x.conv2d(w, b)?)
}

fn upconv<T: Real>(x: &Tensor<T>, p: &ParamTensors<T>, prefix: &str) -> Result<Tensor<T>, ModelError> {
    let w = p.get(&format!("{prefix}.weight"))?;
    let b = p.get(&format!("{prefix}.bias"))?;
    Ok(x.conv_transpose2d(w, b)?)
}

fn norm<T: Real>(x: &Tensor<T>, p: &ParamTensors<T>, prefix: &str) -> Result<Tensor<T>, ModelError> {
    let Architecture::UNet(cfg) = p.arch() else {
        return Err(ModelError::MissingParam(format!("{prefix}.gamma")));
    };
    let g = p.get(&format!("{prefix}.gamma"))?;
    let b = p.get(&format!("{prefix}.beta"))?;
    Ok(x.batchnorm2d(g, b, T::of(cfg.eps))?)
}

fn double_conv<T: Real>(x: &Tensor<T>, p: &ParamTensors<T>, prefix: &str) -> Result<Tensor<T>, ModelError> {
    let h = norm(&conv(x, p, &format!("{prefix}.conv1"))?, p, &format!("{prefix}.bn1"))?.relu()?;
    Ok(norm(&conv(&h, p, &format!("{prefix}.conv2"))?, p, &format!("{prefix}.bn2"))?.relu()?)
}

/// conv (double channels), batch norm, relu, conv, batch norm, relu.
pub fn contracting_block<T: Real>(x: &Tensor<T>, p: &ParamTensors<T>, level: usize) -> Result<Tensor<T>, ModelError> {
    double_conv(x, p, &format!("down{level}"))
}

/// A contracting block followed by a 2x2 stride-2 transposed conv that halves channels.
pub fn bottom_block<T: Real>(x: &Tensor<T>, p: &ParamTensors<T>) -> Result<Tensor<T>, ModelError> {
    upconv(&double_conv(x, p, "bottom")?, p, "bottom.up")
}

pub fn expanding_block<T: Real>(
    x_up: &Tensor<T>,
    skip: &Tensor<T>,
    p: &ParamTensors<T>,
    level: usize,
) -> Result<Tensor<T>, ModelError> {
    let prefix = format!("up{level}");
    let h = skip.concat_channels(x_up)?;
    let h = conv(&h, p, &format!("{prefix}.conv1"))?.relu()?;
    let h = conv(&h, p, &format!("{prefix}.conv2"))?.relu()?;
    Ok(upconv(&h, p, &format!("{prefix}.up"))?.relu()?)
}

pub fn top_block<T: Real>(x_up: &Tensor<T>, skip: &Tensor<T>, p: &ParamTensors<T>) -> Result<Tensor<T>, ModelError> {
    let h = skip.concat_channels(x_up)?;
    let h = conv(&h, p, "top.conv1")?.relu()?;
    let h = conv(&h, p, "top.conv2")?.relu()?;
    Ok(conv(&h, p, "top.out")?.sigmoid()?)
}

/// Full network on an `[N, 3, H, W]` batch.
pub fn forward<T: Real>(p: &ParamTensors<T>, image: &Tensor<T>) -> Result<Tensor<T>, ModelError> {
    let arch = *p.arch();
    arch.check_input(image.dims())?;
    let Architecture::UNet(cfg) = arch else {
        return Ok(image.clone());
    };
    let mut skips = Vec::with_capacity(cfg.depth);
    let mut x = image.clone();
    for level in 0..cfg.depth {
        let y = contracting_block(&x, p, level)?;
        x = y.maxpool2()?;
        skips.push(y);
    }
    x = bottom_block(&x, p)?;
    for level in (1..cfg.depth).rev() {
        x = expanding_block(&x, &skips[level], p, level)?;
    }
    top_block(&x, &skips[0], p)
}

/// Untracked inference.
pub fn predict<T: Real>(params: &ParamSet<T>, image: &Tensor<T>) -> Result<Tensor<T>, ModelError> {
    forward(&params.constants()?, image)
}

/// Binds `params` as graph leaves and returns `(bound, output)`.
pub fn forward_tracked<T: Real>(
    params: &ParamSet<T>,
    image: &Tensor<T>,
) -> Result<(ParamTensors<T>, Tensor<T>), ModelError> {
    let bound = params.bind()?;
    let out = forward(&bound, image)?;
    Ok((bound, out))
}

#[cfg(test)]
mod tests;
