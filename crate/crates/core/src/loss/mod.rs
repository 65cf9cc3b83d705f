//! ExpandNet reconstruction loss and the SSIM/PSNR evaluation metrics.

mod metrics;
mod report;

pub use metrics::{gaussian_window, psnr, psnr_from_mse, ssim, MetricError, SSIM_C1, SSIM_C2, SSIM_SIGMA, SSIM_WINDOW};
pub use report::{EvalMode, MetricItem, MetricReport, ModeSummary};

use crate::scalar::Real;
use crate::tensor::{dim_mismatch, Result, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    /// Weight of the cosine-similarity term.
    pub lambda: f64,
    /// Floor on the product of pixel norms in the cosine denominator.
    pub eps: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig { lambda: 5.0, eps: 1e-8 }
    }
}

fn as_batch<T: Real>(t: &Tensor<T>) -> Result<Tensor<T>> {
    match t.dims() {
        [c, h, w] => t.reshape(&[1, *c, *h, *w]),
        _ => {
            t.shape().expect_nchw("expandnet_loss")?;
            Ok(t.clone())
        }
    }
}

/// `mean |pred - target| + lambda * (1 - mean_j cos(pred_j, target_j))`.
///
/// The l1 term averages over every channel of every pixel; the cosine term
/// averages over pixel sites `j`, treating each pixel as an RGB vector. Takes
/// `[C, H, W]` or `[N, C, H, W]`; for a batch of equally sized images this is
/// the mean of the per-image losses. The cosine denominator is
/// `max(|pred_j| |target_j|, eps)`, so black pixels contribute a cosine of 0.
pub fn expandnet_loss<T: Real>(pred: &Tensor<T>, target: &Tensor<T>, cfg: &LossConfig) -> Result<Tensor<T>> {
    let pred = as_batch(pred)?;
    let target = as_batch(target)?;
    if pred.shape() != target.shape() {
        return Err(dim_mismatch("expandnet_loss", "all axes", pred.shape(), target.shape()));
    }
    let l1 = pred.sub(&target)?.abs()?.mean_all()?;
    if cfg.lambda == 0.0 {
        return Ok(l1);
    }
    let dot = pred.mul(&target)?.pixel_sum()?;
    let pp = pred.square()?.pixel_sum()?;
    let tt = target.square()?.pixel_sum()?;
    let floor = T::of(cfg.eps * cfg.eps);
    let denom = pp.mul(&tt)?.clamp_min(floor)?.sqrt()?;
    let cos = dot.div(&denom)?.mean_all()?;
    let penalty = cos.neg()?.add_scalar(T::one())?.scale(T::of(cfg.lambda))?;
    l1.add(&penalty)
}
