//! Elementwise maps, reductions, broadcasts and channel plumbing.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::{dim_mismatch, Result, Shape, Tensor, TensorError};
use crate::scalar::Real;

fn same_shape<T: Real>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(dim_mismatch(op, "all axes", a.shape(), b.shape()));
    }
    Ok(())
}

fn zip_map<T: Real>(a: &[T], b: &[T], f: impl Fn(T, T) -> T) -> Vec<T> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

impl<T: Real> Tensor<T> {
    pub fn add(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        same_shape("add", self, other)?;
        let data = zip_map(self.data(), other.data(), |x, y| x + y);
        Tensor::from_op("add", data, *self.shape(), &[self, other], |g, _, _| {
            Ok(vec![Some(g.clone()), Some(g.clone())])
        })
    }

    pub fn sub(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        same_shape("sub", self, other)?;
        let data = zip_map(self.data(), other.data(), |x, y| x - y);
        Tensor::from_op("sub", data, *self.shape(), &[self, other], |g, _, needs| {
            let gb = if needs[1] { Some(g.neg()?) } else { None };
            Ok(vec![Some(g.clone()), gb])
        })
    }

    pub fn mul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        same_shape("mul", self, other)?;
        let data = zip_map(self.data(), other.data(), |x, y| x * y);
        Tensor::from_op("mul", data, *self.shape(), &[self, other], |g, xs, needs| {
            let ga = if needs[0] { Some(g.mul(&xs[1])?) } else { None };
            let gb = if needs[1] { Some(g.mul(&xs[0])?) } else { None };
            Ok(vec![ga, gb])
        })
    }

    pub fn div(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        same_shape("div", self, other)?;
        let data = zip_map(self.data(), other.data(), |x, y| x / y);
        Tensor::from_op("div", data, *self.shape(), &[self, other], |g, xs, needs| {
            let g_over_b = g.div(&xs[1])?;
            let gb = if needs[1] {
                // d(a/b)/db = -(a/b)/b
                Some(g_over_b.mul(&xs[0])?.div(&xs[1])?.neg()?)
            } else {
                None
            };
            Ok(vec![needs[0].then_some(g_over_b), gb])
        })
    }

    pub fn neg(&self) -> Result<Tensor<T>> {
        let data = self.data().iter().map(|&x| -x).collect();
        Tensor::from_op("neg", data, *self.shape(), &[self], |g, _, _| Ok(vec![Some(g.neg()?)]))
    }

    pub fn scale(&self, c: T) -> Result<Tensor<T>> {
        let data = self.data().iter().map(|&x| x * c).collect();
        Tensor::from_op("scale", data, *self.shape(), &[self], move |g, _, _| {
            Ok(vec![Some(g.scale(c)?)])
        })
    }

    pub fn add_scalar(&self, c: T) -> Result<Tensor<T>> {
        let data = self.data().iter().map(|&x| x + c).collect();
        Tensor::from_op("add_scalar", data, *self.shape(), &[self], |g, _, _| {
            Ok(vec![Some(g.clone())])
        })
    }

    pub fn square(&self) -> Result<Tensor<T>> {
        self.mul(self)
    }

    pub fn sqrt(&self) -> Result<Tensor<T>> {
        let data = self.data().iter().map(|&x| x.sqrt()).collect();
        Tensor::from_op("sqrt", data, *self.shape(), &[self], |g, xs, _| {
            let two_root = xs[0].sqrt()?.scale(T::of(2.0))?;
            Ok(vec![Some(g.div(&two_root)?)])
        })
    }

    /// `|x|`; the derivative at 0 is taken as 0.
    pub fn abs(&self) -> Result<Tensor<T>> {
        let data = self.data().iter().map(|&x| x.abs()).collect();
        Tensor::from_op("abs", data, *self.shape(), &[self], |g, xs, _| {
            let sign = xs[0]
                .data()
                .iter()
                .map(|&x| {
                    if x > T::zero() {
                        T::one()
                    } else if x < T::zero() {
                        -T::one()
                    } else {
                        T::zero()
                    }
                })
                .collect();
            let sign = Tensor::constant_with_shape(sign, *xs[0].shape());
            Ok(vec![Some(g.mul(&sign)?)])
        })
    }

    /// `max(x, 0)`; the derivative at 0 is taken as 0.
    pub fn relu(&self) -> Result<Tensor<T>> {
        self.threshold("relu", T::zero())
    }

    /// `max(x, floor)`; the derivative is 1 strictly above `floor`, 0 otherwise.
    pub fn clamp_min(&self, floor: T) -> Result<Tensor<T>> {
        self.threshold("clamp_min", floor)
    }

    fn threshold(&self, op: &'static str, floor: T) -> Result<Tensor<T>> {
        let data = self.data().iter().map(|&x| x.max(floor)).collect();
        Tensor::from_op(op, data, *self.shape(), &[self], move |g, xs, _| {
            let mask = xs[0]
                .data()
                .iter()
                .map(|&x| if x > floor { T::one() } else { T::zero() })
                .collect();
            let mask = Tensor::constant_with_shape(mask, *xs[0].shape());
            Ok(vec![Some(g.mul(&mask)?)])
        })
    }

    pub fn sigmoid(&self) -> Result<Tensor<T>> {
        let data = self.data().iter().map(|&x| sigmoid(x)).collect();
        Tensor::from_op("sigmoid", data, *self.shape(), &[self], |g, xs, _| {
            // s' = s (1 - s), rebuilt from the input so it stays differentiable
            let s = xs[0].sigmoid()?;
            let one_minus = s.neg()?.add_scalar(T::one())?;
            Ok(vec![Some(g.mul(&s)?.mul(&one_minus)?)])
        })
    }

    pub fn reshape(&self, dims: &[usize]) -> Result<Tensor<T>> {
        let shape = Shape::new(dims)?;
        if shape.numel() != self.numel() {
            return Err(dim_mismatch("reshape", "element count", self.shape(), &shape));
        }
        let from = *self.shape();
        Tensor::from_op("reshape", self.to_vec(), shape, &[self], move |g, _, _| {
            Ok(vec![Some(g.reshape(from.dims())?)])
        })
    }

    /// Sum of all elements as a `[1]` tensor.
    pub fn sum_all(&self) -> Result<Tensor<T>> {
        let s = pairwise_sum(self.data());
        let from = *self.shape();
        Tensor::from_op("sum_all", vec![s], Shape::new(&[1])?, &[self], move |g, _, _| {
            Ok(vec![Some(g.expand(from.dims())?)])
        })
    }

    pub fn mean_all(&self) -> Result<Tensor<T>> {
        let n = T::of(self.numel() as f64);
        self.sum_all()?.scale(T::one() / n)
    }

    /// Broadcasts a single-element tensor to `dims`.
    pub fn expand(&self, dims: &[usize]) -> Result<Tensor<T>> {
        let shape = Shape::new(dims)?;
        if self.numel() != 1 {
            return Err(TensorError::InvalidShape {
                op: "expand",
                dims: self.dims().to_vec(),
                reason: "only single-element tensors can be expanded".into(),
            });
        }
        let data = vec![self.item(); shape.numel()];
        let from = *self.shape();
        Tensor::from_op("expand", data, shape, &[self], move |g, _, _| {
            Ok(vec![Some(g.sum_all()?.reshape(from.dims())?)])
        })
    }

    /// Per-channel sum over the batch and spatial axes: `[N,C,H,W] -> [C]`.
    pub fn channel_sum(&self) -> Result<Tensor<T>> {
        let (n, c, h, w) = self.shape().expect_nchw("channel_sum")?;
        let plane = h * w;
        let mut out = vec![T::zero(); c];
        for (ci, o) in out.iter_mut().enumerate() {
            let mut acc = T::zero();
            for ni in 0..n {
                let start = (ni * c + ci) * plane;
                acc += pairwise_sum(&self.data()[start..start + plane]);
            }
            *o = acc;
        }
        let from = *self.shape();
        Tensor::from_op("channel_sum", out, Shape::new(&[c])?, &[self], move |g, _, _| {
            Ok(vec![Some(g.channel_broadcast(from.dims())?)])
        })
    }

    /// Broadcasts a `[C]` vector over `[N,C,H,W]`.
    pub fn channel_broadcast(&self, dims: &[usize]) -> Result<Tensor<T>> {
        let shape = Shape::new(dims)?;
        let (n, c, h, w) = shape.expect_nchw("channel_broadcast")?;
        if self.dims() != [c] {
            return Err(dim_mismatch(
                "channel_broadcast",
                "channels (axis 1)",
                self.shape(),
                &shape,
            ));
        }
        let plane = h * w;
        let mut out = Vec::with_capacity(shape.numel());
        for _ in 0..n {
            for &v in self.data() {
                out.extend(core::iter::repeat_n(v, plane));
            }
        }
        Tensor::from_op("channel_broadcast", out, shape, &[self], |g, _, _| {
            Ok(vec![Some(g.channel_sum()?)])
        })
    }

    /// Sum over the channel axis at each pixel: `[N,C,H,W] -> [N,1,H,W]`.
    pub fn pixel_sum(&self) -> Result<Tensor<T>> {
        let (n, c, h, w) = self.shape().expect_nchw("pixel_sum")?;
        let plane = h * w;
        let mut out = vec![T::zero(); n * plane];
        for ni in 0..n {
            let dst = &mut out[ni * plane..(ni + 1) * plane];
            for ci in 0..c {
                let src = &self.data()[(ni * c + ci) * plane..(ni * c + ci + 1) * plane];
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
        Tensor::from_op("pixel_sum", out, Shape::new(&[n, 1, h, w])?, &[self], move |g, _, _| {
            Ok(vec![Some(g.pixel_broadcast(c)?)])
        })
    }

    /// Repeats a `[N,1,H,W]` tensor `channels` times along axis 1.
    pub fn pixel_broadcast(&self, channels: usize) -> Result<Tensor<T>> {
        let (n, c, h, w) = self.shape().expect_nchw("pixel_broadcast")?;
        if c != 1 {
            return Err(TensorError::InvalidShape {
                op: "pixel_broadcast",
                dims: self.dims().to_vec(),
                reason: "expected a single channel".into(),
            });
        }
        let plane = h * w;
        let mut out = Vec::with_capacity(n * channels * plane);
        for ni in 0..n {
            let src = &self.data()[ni * plane..(ni + 1) * plane];
            for _ in 0..channels {
                out.extend_from_slice(src);
            }
        }
        let shape = Shape::new(&[n, channels, h, w])?;
        Tensor::from_op("pixel_broadcast", out, shape, &[self], |g, _, _| {
            Ok(vec![Some(g.pixel_sum()?)])
        })
    }

    /// Channels of `self` followed by channels of `other`.
    pub fn concat_channels(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        let (n, ca, h, w) = self.shape().expect_nchw("concat_channels")?;
        let (nb, cb, hb, wb) = other.shape().expect_nchw("concat_channels")?;
        if n != nb {
            return Err(dim_mismatch(
                "concat_channels",
                "batch (axis 0)",
                self.shape(),
                other.shape(),
            ));
        }
        if (h, w) != (hb, wb) {
            return Err(dim_mismatch(
                "concat_channels",
                "height/width (axes 2, 3)",
                self.shape(),
                other.shape(),
            ));
        }
        let plane = h * w;
        let mut out = Vec::with_capacity(n * (ca + cb) * plane);
        for ni in 0..n {
            out.extend_from_slice(&self.data()[ni * ca * plane..(ni + 1) * ca * plane]);
            out.extend_from_slice(&other.data()[ni * cb * plane..(ni + 1) * cb * plane]);
        }
        let shape = Shape::new(&[n, ca + cb, h, w])?;
        Tensor::from_op("concat_channels", out, shape, &[self, other], move |g, _, needs| {
            let ga = if needs[0] { Some(g.slice_channels(0, ca)?) } else { None };
            let gb = if needs[1] {
                Some(g.slice_channels(ca, cb)?)
            } else {
                None
            };
            Ok(vec![ga, gb])
        })
    }

    /// Channels `start..start + len`.
    pub fn slice_channels(&self, start: usize, len: usize) -> Result<Tensor<T>> {
        let (n, c, h, w) = self.shape().expect_nchw("slice_channels")?;
        if len == 0 || start + len > c {
            return Err(TensorError::InvalidShape {
                op: "slice_channels",
                dims: self.dims().to_vec(),
                reason: format!("channel range {start}..{} out of bounds", start + len),
            });
        }
        let plane = h * w;
        let mut out = Vec::with_capacity(n * len * plane);
        for ni in 0..n {
            let base = (ni * c + start) * plane;
            out.extend_from_slice(&self.data()[base..base + len * plane]);
        }
        let shape = Shape::new(&[n, len, h, w])?;
        Tensor::from_op("slice_channels", out, shape, &[self], move |g, _, _| {
            Ok(vec![Some(g.embed_channels(start, c)?)])
        })
    }

    /// Zero tensor with `total` channels holding `self` at channels `start..`.
    pub fn embed_channels(&self, start: usize, total: usize) -> Result<Tensor<T>> {
        let (n, len, h, w) = self.shape().expect_nchw("embed_channels")?;
        if start + len > total {
            return Err(TensorError::InvalidShape {
                op: "embed_channels",
                dims: self.dims().to_vec(),
                reason: format!("does not fit at channel {start} of {total}"),
            });
        }
        let plane = h * w;
        let mut out = vec![T::zero(); n * total * plane];
        for ni in 0..n {
            let base = (ni * total + start) * plane;
            out[base..base + len * plane].copy_from_slice(&self.data()[ni * len * plane..(ni + 1) * len * plane]);
        }
        let shape = Shape::new(&[n, total, h, w])?;
        Tensor::from_op("embed_channels", out, shape, &[self], move |g, _, _| {
            Ok(vec![Some(g.slice_channels(start, len)?)])
        })
    }
}

#[inline]
pub(crate) fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Summation with a fixed, order-stable pairwise tree (better accuracy than a
/// running sum for the long reductions in losses and batch statistics).
pub(crate) fn pairwise_sum<T: Real>(xs: &[T]) -> T {
    const BLOCK: usize = 64;
    if xs.len() <= BLOCK {
        let mut lanes = [T::zero(); 8];
        let mut chunks = xs.chunks_exact(8);
        for c in &mut chunks {
            for (l, &v) in lanes.iter_mut().zip(c) {
                *l += v;
            }
        }
        let mut acc = T::zero();
        for v in chunks.remainder() {
            acc += *v;
        }
        for l in lanes {
            acc += l;
        }
        return acc;
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(data: &[f64], dims: &[usize]) -> Tensor<f64> {
        Tensor::param(data.to_vec(), dims).unwrap()
    }

    #[test]
    fn relu_and_sigmoid_values() {
        let x = t(&[-1.0, 0.0, 2.0], &[3]);
        assert_eq!(x.relu().unwrap().data(), &[0.0, 0.0, 2.0]);
        let z = t(&[0.0], &[1]);
        assert_eq!(z.sigmoid().unwrap().item(), 0.5);
        let g = crate::tensor::backward(&z.sigmoid().unwrap(), core::slice::from_ref(&z), false).unwrap();
        assert_eq!(g.grads[0].item(), 0.25);
    }

    #[test]
    fn relu_gradient_at_zero_is_zero() {
        let x = t(&[-1.0, 0.0, 2.0], &[3]);
        let y = x.relu().unwrap().sum_all().unwrap();
        let g = crate::tensor::backward(&y, &[x], false).unwrap();
        assert_eq!(g.grads[0].data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn sigmoid_is_strictly_inside_unit_interval() {
        let x = t(&[-30.0, -3.0, 0.5, 30.0], &[4]);
        for v in x.sigmoid().unwrap().data() {
            assert!(*v > 0.0 && *v < 1.0);
        }
    }

    #[test]
    fn concat_then_slice_recovers_inputs() {
        let a = Tensor::<f64>::from_vec((0..32).map(f64::from).collect(), &[1, 2, 4, 4]).unwrap();
        let b = Tensor::<f64>::from_vec((0..48).map(f64::from).collect(), &[1, 3, 4, 4]).unwrap();
        let c = a.concat_channels(&b).unwrap();
        assert_eq!(c.dims(), &[1, 5, 4, 4]);
        assert_eq!(c.slice_channels(0, 2).unwrap().data(), a.data());
        assert_eq!(c.slice_channels(2, 3).unwrap().data(), b.data());
    }

    #[test]
    fn concat_gradient_is_ones_for_both() {
        let a = Tensor::<f64>::param(vec![0.5; 8], &[2, 1, 2, 2]).unwrap();
        let b = Tensor::<f64>::param(vec![1.5; 24], &[2, 3, 2, 2]).unwrap();
        let s = a.concat_channels(&b).unwrap().sum_all().unwrap();
        let g = crate::tensor::backward(&s, &[a, b], false).unwrap();
        assert!(g.grads.iter().all(|g| g.data().iter().all(|&v| v == 1.0)));
    }

    #[test]
    fn concat_rejects_spatial_mismatch() {
        let a = Tensor::<f64>::zeros(&[1, 2, 4, 4]).unwrap();
        let b = Tensor::<f64>::zeros(&[1, 2, 4, 5]).unwrap();
        match a.concat_channels(&b) {
            Err(TensorError::Dimension { axes, .. }) => assert!(axes.contains("height")),
            other => panic!("expected dimension error, got {other:?}"),
        }
    }

    #[test]
    fn non_finite_output_is_an_error() {
        let a = t(&[1.0], &[1]);
        let z = t(&[0.0], &[1]);
        match a.div(&z) {
            Err(TensorError::NonFinite { op, .. }) => assert_eq!(op, "div"),
            other => panic!("expected non-finite error, got {other:?}"),
        }
    }

    #[test]
    fn shape_mismatch_in_elementwise() {
        let a = t(&[1.0, 2.0], &[2]);
        let b = t(&[1.0, 2.0, 3.0], &[3]);
        assert!(matches!(a.add(&b), Err(TensorError::Dimension { .. })));
    }

    #[test]
    fn pairwise_sum_matches_naive_on_integers() {
        let xs: Vec<f64> = (0..1000).map(f64::from).collect();
        assert_eq!(pairwise_sum(&xs), 499_500.0);
    }
}
