use super::{dim_mismatch, Result, Tensor, TensorError};
use crate::scalar::Real;

impl<T: Real> Tensor<T> {
    /// Batch normalization over `(N, H, W)` using the statistics of this batch
    /// (population variance). No running averages are kept.
    pub fn batchnorm2d(&self, gamma: &Tensor<T>, beta: &Tensor<T>, eps: T) -> Result<Tensor<T>> {
        let (n, c, h, w) = self.shape().expect_nchw("batchnorm2d")?;
        if gamma.dims() != [c] {
            return Err(dim_mismatch(
                "batchnorm2d",
                "gamma vs channels (axis 1)",
                gamma.shape(),
                self.shape(),
            ));
        }
        if beta.dims() != [c] {
            return Err(dim_mismatch(
                "batchnorm2d",
                "beta vs channels (axis 1)",
                beta.shape(),
                self.shape(),
            ));
        }
        let count = n * h * w;
        if count < 2 {
            return Err(TensorError::InvalidShape {
                op: "batchnorm2d",
                dims: self.dims().to_vec(),
                reason: "needs at least two values per channel".into(),
            });
        }
        let inv_count = T::one() / T::of(count as f64);
        let mean = self.channel_sum()?.scale(inv_count)?;
        let centered = self.sub(&mean.channel_broadcast(self.dims())?)?;
        let var = centered.square()?.channel_sum()?.scale(inv_count)?;
        let std = var.add_scalar(eps)?.sqrt()?;
        let gain = gamma.div(&std)?;
        centered
            .mul(&gain.channel_broadcast(self.dims())?)?
            .add(&beta.channel_broadcast(self.dims())?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn two_values_normalize_to_unit() {
        let x = Tensor::<f64>::from_vec(vec![1.0, 3.0], &[1, 1, 1, 2]).unwrap();
        let g = Tensor::<f64>::ones(&[1]).unwrap();
        let b = Tensor::<f64>::zeros(&[1]).unwrap();
        assert_eq!(x.batchnorm2d(&g, &b, 0.0).unwrap().data(), &[-1.0, 1.0]);
    }

    #[test]
    fn standardized_input_is_unchanged() {
        // each channel already has mean 0 and population variance 1
        let x = Tensor::<f64>::from_vec(vec![-1.0, 1.0, 1.0, -1.0, 1.0, -1.0, -1.0, 1.0], &[2, 2, 1, 2]).unwrap();
        let g = Tensor::<f64>::ones(&[2]).unwrap();
        let b = Tensor::<f64>::zeros(&[2]).unwrap();
        let y = x.batchnorm2d(&g, &b, 1e-12).unwrap();
        for (a, e) in y.data().iter().zip(x.data()) {
            assert!((a - e).abs() < 1e-5);
        }
    }

    #[test]
    fn zero_gamma_gives_beta() {
        let x = Tensor::<f64>::from_vec((0..16).map(f64::from).collect(), &[1, 2, 2, 4]).unwrap();
        let g = Tensor::<f64>::zeros(&[2]).unwrap();
        let b = Tensor::<f64>::from_vec(vec![0.25, -3.0], &[2]).unwrap();
        let y = x.batchnorm2d(&g, &b, 1e-5).unwrap();
        assert!(y.data()[..8].iter().all(|&v| v == 0.25));
        assert!(y.data()[8..].iter().all(|&v| v == -3.0));
    }

    #[test]
    fn constant_channel_uses_eps() {
        let x = Tensor::<f64>::full(&[1, 1, 2, 2], 4.0).unwrap();
        let g = Tensor::<f64>::ones(&[1]).unwrap();
        let b = Tensor::<f64>::zeros(&[1]).unwrap();
        let y = x.batchnorm2d(&g, &b, 1e-5).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }
}
