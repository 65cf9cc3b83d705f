//! Convolutions.
//!
//! Two closed families of bilinear ops make every convolution differentiable
//! to any order:
//!
//! * stride-1 "same" correlation: `conv_same(x, w)`, `conv_weight_grad(x, g)`
//!   and the kernel permutation `flip_transpose(w)`;
//! * 2x2 stride-2 transposed convolution: `upsample(x, w)`, its adjoint
//!   `downsample(g, w)` and `upsample_weight_grad(x, g)`.
//!
//! The backward rule of each member is expressed with members of the same
//! family, so gradients of gradients need no extra kernels.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::{dim_mismatch, Result, Shape, Tensor, TensorError};
use crate::scalar::Real;

#[inline]
fn axpy<T: Real>(dst: &mut [T], a: T, src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += a * s;
    }
}

#[inline]
pub(crate) fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut lanes = [T::zero(); 8];
    let mut ca = a.chunks_exact(8);
    let mut cb = b.chunks_exact(8);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for k in 0..8 {
            lanes[k] += x[k] * y[k];
        }
    }
    let mut acc = T::zero();
    for (&x, &y) in ca.remainder().iter().zip(cb.remainder()) {
        acc += x * y;
    }
    let l = lanes;
    acc + (((l[0] + l[4]) + (l[1] + l[5])) + ((l[2] + l[6]) + (l[3] + l[7])))
}

/// Column range `[lo, hi)` of output positions whose source column `j + shift`
/// stays inside `0..width`.
#[inline]
fn valid_cols(width: usize, shift: isize) -> (usize, usize) {
    let lo = (-shift).max(0) as usize;
    let hi = (width as isize - shift).clamp(0, width as isize) as usize;
    (lo, hi.max(lo))
}

fn conv_same_raw<T: Real>(
    x: &[T],
    (n, c, h, w): (usize, usize, usize, usize),
    weight: &[T],
    f: usize,
    k: usize,
) -> Vec<T> {
    let p = (k / 2) as isize;
    let plane = h * w;
    let mut out = vec![T::zero(); n * f * plane];
    for ni in 0..n {
        for fi in 0..f {
            let dst = &mut out[(ni * f + fi) * plane..(ni * f + fi + 1) * plane];
            for ci in 0..c {
                let src = &x[(ni * c + ci) * plane..(ni * c + ci + 1) * plane];
                let taps = &weight[(fi * c + ci) * k * k..(fi * c + ci + 1) * k * k];
                for a in 0..k {
                    let di = a as isize - p;
                    for b in 0..k {
                        let dj = b as isize - p;
                        let wv = taps[a * k + b];
                        let (j0, j1) = valid_cols(w, dj);
                        for i in 0..h {
                            let si = i as isize + di;
                            if si < 0 || si >= h as isize {
                                continue;
                            }
                            let s0 = si as usize * w;
                            axpy(
                                &mut dst[i * w + j0..i * w + j1],
                                wv,
                                &src[(s0 as isize + j0 as isize + dj) as usize
                                    ..(s0 as isize + j1 as isize + dj) as usize],
                            );
                        }
                    }
                }
            }
        }
    }
    out
}

fn conv_weight_grad_raw<T: Real>(
    x: &[T],
    (n, c, h, w): (usize, usize, usize, usize),
    g: &[T],
    f: usize,
    k: usize,
) -> Vec<T> {
    let p = (k / 2) as isize;
    let plane = h * w;
    let mut out = vec![T::zero(); f * c * k * k];
    for fi in 0..f {
        for ci in 0..c {
            for a in 0..k {
                let di = a as isize - p;
                for b in 0..k {
                    let dj = b as isize - p;
                    let (j0, j1) = valid_cols(w, dj);
                    let mut acc = T::zero();
                    for ni in 0..n {
                        let gp = &g[(ni * f + fi) * plane..(ni * f + fi + 1) * plane];
                        let xp = &x[(ni * c + ci) * plane..(ni * c + ci + 1) * plane];
                        for i in 0..h {
                            let si = i as isize + di;
                            if si < 0 || si >= h as isize {
                                continue;
                            }
                            let s0 = si * w as isize;
                            acc += dot(
                                &gp[i * w + j0..i * w + j1],
                                &xp[(s0 + j0 as isize + dj) as usize..(s0 + j1 as isize + dj) as usize],
                            );
                        }
                    }
                    out[((fi * c + ci) * k + a) * k + b] = acc;
                }
            }
        }
    }
    out
}

fn upsample_raw<T: Real>(x: &[T], (n, c, h, w): (usize, usize, usize, usize), weight: &[T], f: usize) -> Vec<T> {
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = vec![T::zero(); n * f * oh * ow];
    for ni in 0..n {
        for fi in 0..f {
            let dst = &mut out[(ni * f + fi) * oh * ow..(ni * f + fi + 1) * oh * ow];
            for ci in 0..c {
                let src = &x[(ni * c + ci) * h * w..(ni * c + ci + 1) * h * w];
                let taps = &weight[(ci * f + fi) * 4..(ci * f + fi + 1) * 4];
                for i in 0..h {
                    let srow = &src[i * w..(i + 1) * w];
                    for a in 0..2 {
                        let drow = &mut dst[(2 * i + a) * ow..(2 * i + a + 1) * ow];
                        let (w0, w1) = (taps[a * 2], taps[a * 2 + 1]);
                        for (pair, &s) in drow.chunks_exact_mut(2).zip(srow) {
                            pair[0] += w0 * s;
                            pair[1] += w1 * s;
                        }
                    }
                }
            }
        }
    }
    out
}

fn downsample_raw<T: Real>(g: &[T], (n, f, oh, ow): (usize, usize, usize, usize), weight: &[T], c: usize) -> Vec<T> {
    let (h, w) = (oh / 2, ow / 2);
    let mut out = vec![T::zero(); n * c * h * w];
    for ni in 0..n {
        for ci in 0..c {
            let dst = &mut out[(ni * c + ci) * h * w..(ni * c + ci + 1) * h * w];
            for fi in 0..f {
                let src = &g[(ni * f + fi) * oh * ow..(ni * f + fi + 1) * oh * ow];
                let taps = &weight[(ci * f + fi) * 4..(ci * f + fi + 1) * 4];
                for i in 0..h {
                    let drow = &mut dst[i * w..(i + 1) * w];
                    for a in 0..2 {
                        let srow = &src[(2 * i + a) * ow..(2 * i + a + 1) * ow];
                        let (w0, w1) = (taps[a * 2], taps[a * 2 + 1]);
                        for (d, pair) in drow.iter_mut().zip(srow.chunks_exact(2)) {
                            *d += w0 * pair[0] + w1 * pair[1];
                        }
                    }
                }
            }
        }
    }
    out
}

fn upsample_weight_grad_raw<T: Real>(x: &[T], (n, c, h, w): (usize, usize, usize, usize), g: &[T], f: usize) -> Vec<T> {
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = vec![T::zero(); c * f * 4];
    for ci in 0..c {
        for fi in 0..f {
            let mut acc = [T::zero(); 4];
            for ni in 0..n {
                let xp = &x[(ni * c + ci) * h * w..(ni * c + ci + 1) * h * w];
                let gp = &g[(ni * f + fi) * oh * ow..(ni * f + fi + 1) * oh * ow];
                for i in 0..h {
                    let xrow = &xp[i * w..(i + 1) * w];
                    for a in 0..2 {
                        let grow = &gp[(2 * i + a) * ow..(2 * i + a + 1) * ow];
                        let (mut s0, mut s1) = (T::zero(), T::zero());
                        for (&xv, pair) in xrow.iter().zip(grow.chunks_exact(2)) {
                            s0 += xv * pair[0];
                            s1 += xv * pair[1];
                        }
                        acc[a * 2] += s0;
                        acc[a * 2 + 1] += s1;
                    }
                }
            }
            out[(ci * f + fi) * 4..(ci * f + fi + 1) * 4].copy_from_slice(&acc);
        }
    }
    out
}

fn square_kernel<T: Real>(op: &'static str, weight: &Tensor<T>) -> Result<(usize, usize, usize)> {
    let (a, b, kh, kw) = weight.shape().expect_nchw(op)?;
    if kh != kw || kh % 2 == 0 {
        return Err(TensorError::InvalidShape {
            op,
            dims: weight.dims().to_vec(),
            reason: "kernel must be square with odd extent".into(),
        });
    }
    Ok((a, b, kh))
}

impl<T: Real> Tensor<T> {
    /// 2-D convolution (cross-correlation) with stride 1 and padding
    /// `(k - 1) / 2`, so spatial dims are preserved. `weight` is `[F, C, k, k]`,
    /// `bias` is `[F]`.
    pub fn conv2d(&self, weight: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
        let (f, _, _) = square_kernel("conv2d", weight)?;
        if bias.dims() != [f] {
            return Err(dim_mismatch(
                "conv2d",
                "bias vs output channels",
                bias.shape(),
                weight.shape(),
            ));
        }
        let y = self.conv_same(weight)?;
        let b = bias.channel_broadcast(y.dims())?;
        y.add(&b)
    }

    /// Transposed convolution with a 2x2 kernel and stride 2 (no padding):
    /// `[N, C, H, W] -> [N, F, 2H, 2W]` with `weight` `[C, F, 2, 2]`, `bias` `[F]`.
    pub fn conv_transpose2d(&self, weight: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
        let (_, f, _, _) = weight.shape().expect_nchw("conv_transpose2d")?;
        if bias.dims() != [f] {
            return Err(dim_mismatch(
                "conv_transpose2d",
                "bias vs output channels",
                bias.shape(),
                weight.shape(),
            ));
        }
        let y = self.upsample(weight)?;
        let b = bias.channel_broadcast(y.dims())?;
        y.add(&b)
    }

    pub(crate) fn conv_same(&self, weight: &Tensor<T>) -> Result<Tensor<T>> {
        let (n, c, h, w) = self.shape().expect_nchw("conv2d")?;
        let (f, wc, k) = square_kernel("conv2d", weight)?;
        if wc != c {
            return Err(dim_mismatch(
                "conv2d",
                "input channels (axis 1)",
                self.shape(),
                weight.shape(),
            ));
        }
        let data = conv_same_raw(self.data(), (n, c, h, w), weight.data(), f, k);
        let shape = Shape::new(&[n, f, h, w])?;
        Tensor::from_op("conv2d", data, shape, &[self, weight], move |g, xs, needs| {
            let gx = if needs[0] {
                Some(g.conv_same(&xs[1].flip_transpose()?)?)
            } else {
                None
            };
            let gw = if needs[1] {
                Some(xs[0].conv_weight_grad(g, k)?)
            } else {
                None
            };
            Ok(vec![gx, gw])
        })
    }

    /// `[F, C, k, k] -> [C, F, k, k]` with both spatial axes reversed.
    pub(crate) fn flip_transpose(&self) -> Result<Tensor<T>> {
        let (f, c, k, k2) = self.shape().expect_nchw("flip_transpose")?;
        debug_assert_eq!(k, k2);
        let src = self.data();
        let mut out = vec![T::zero(); src.len()];
        for fi in 0..f {
            for ci in 0..c {
                for a in 0..k {
                    for b in 0..k {
                        out[((ci * f + fi) * k + (k - 1 - a)) * k + (k - 1 - b)] = src[((fi * c + ci) * k + a) * k + b];
                    }
                }
            }
        }
        let shape = Shape::new(&[c, f, k, k])?;
        Tensor::from_op("flip_transpose", out, shape, &[self], |g, _, _| {
            Ok(vec![Some(g.flip_transpose()?)])
        })
    }

    /// Gradient of `conv_same` with respect to its kernel:
    /// `dw[f,c,a,b] = sum_{n,i,j} g[n,f,i,j] x[n,c,i+a-p,j+b-p]`.
    pub(crate) fn conv_weight_grad(&self, g: &Tensor<T>, k: usize) -> Result<Tensor<T>> {
        let (n, c, h, w) = self.shape().expect_nchw("conv_weight_grad")?;
        let (gn, f, gh, gw) = g.shape().expect_nchw("conv_weight_grad")?;
        if (gn, gh, gw) != (n, h, w) {
            return Err(dim_mismatch(
                "conv_weight_grad",
                "batch/height/width",
                self.shape(),
                g.shape(),
            ));
        }
        let data = conv_weight_grad_raw(self.data(), (n, c, h, w), g.data(), f, k);
        let shape = Shape::new(&[f, c, k, k])?;
        Tensor::from_op("conv_weight_grad", data, shape, &[self, g], |d, xs, needs| {
            let gx = if needs[0] {
                Some(xs[1].conv_same(&d.flip_transpose()?)?)
            } else {
                None
            };
            let gg = if needs[1] { Some(xs[0].conv_same(d)?) } else { None };
            Ok(vec![gx, gg])
        })
    }

    pub(crate) fn upsample(&self, weight: &Tensor<T>) -> Result<Tensor<T>> {
        let (n, c, h, w) = self.shape().expect_nchw("conv_transpose2d")?;
        let (wc, f, kh, kw) = weight.shape().expect_nchw("conv_transpose2d")?;
        if (kh, kw) != (2, 2) {
            return Err(TensorError::InvalidShape {
                op: "conv_transpose2d",
                dims: weight.dims().to_vec(),
                reason: format!("kernel must be 2x2, got {kh}x{kw}"),
            });
        }
        if wc != c {
            return Err(dim_mismatch(
                "conv_transpose2d",
                "input channels (axis 1)",
                self.shape(),
                weight.shape(),
            ));
        }
        let data = upsample_raw(self.data(), (n, c, h, w), weight.data(), f);
        let shape = Shape::new(&[n, f, 2 * h, 2 * w])?;
        Tensor::from_op("conv_transpose2d", data, shape, &[self, weight], |g, xs, needs| {
            let gx = if needs[0] { Some(g.downsample(&xs[1])?) } else { None };
            let gw = if needs[1] {
                Some(xs[0].upsample_weight_grad(g)?)
            } else {
                None
            };
            Ok(vec![gx, gw])
        })
    }

    /// Adjoint of [`upsample`](Self::upsample) in its input:
    /// `[N, F, 2H, 2W] -> [N, C, H, W]` with `weight` `[C, F, 2, 2]`.
    pub(crate) fn downsample(&self, weight: &Tensor<T>) -> Result<Tensor<T>> {
        let (n, f, oh, ow) = self.shape().expect_nchw("downsample")?;
        let (c, wf, _, _) = weight.shape().expect_nchw("downsample")?;
        if wf != f || oh % 2 != 0 || ow % 2 != 0 {
            return Err(dim_mismatch(
                "downsample",
                "channels/even extents",
                self.shape(),
                weight.shape(),
            ));
        }
        let data = downsample_raw(self.data(), (n, f, oh, ow), weight.data(), c);
        let shape = Shape::new(&[n, c, oh / 2, ow / 2])?;
        Tensor::from_op("downsample", data, shape, &[self, weight], |d, xs, needs| {
            let gg = if needs[0] { Some(d.upsample(&xs[1])?) } else { None };
            let gw = if needs[1] {
                Some(d.upsample_weight_grad(&xs[0])?)
            } else {
                None
            };
            Ok(vec![gg, gw])
        })
    }

    /// `dw[c,f,a,b] = sum_{n,i,j} x[n,c,i,j] g[n,f,2i+a,2j+b]`.
    pub(crate) fn upsample_weight_grad(&self, g: &Tensor<T>) -> Result<Tensor<T>> {
        let (n, c, h, w) = self.shape().expect_nchw("upsample_weight_grad")?;
        let (gn, f, gh, gw) = g.shape().expect_nchw("upsample_weight_grad")?;
        if (gn, gh, gw) != (n, 2 * h, 2 * w) {
            return Err(dim_mismatch(
                "upsample_weight_grad",
                "batch/height/width",
                self.shape(),
                g.shape(),
            ));
        }
        let data = upsample_weight_grad_raw(self.data(), (n, c, h, w), g.data(), f);
        let shape = Shape::new(&[c, f, 2, 2])?;
        Tensor::from_op("upsample_weight_grad", data, shape, &[self, g], |d, xs, needs| {
            let gx = if needs[0] { Some(xs[1].downsample(d)?) } else { None };
            let gg = if needs[1] { Some(xs[0].upsample(d)?) } else { None };
            Ok(vec![gx, gg])
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::backward;

    #[test]
    fn all_ones_3x3() {
        let x = Tensor::<f64>::ones(&[1, 1, 3, 3]).unwrap();
        let w = Tensor::<f64>::ones(&[1, 1, 3, 3]).unwrap();
        let b = Tensor::<f64>::zeros(&[1]).unwrap();
        let y = x.conv2d(&w, &b).unwrap();
        assert_eq!(y.data(), &[4.0, 6.0, 4.0, 6.0, 9.0, 6.0, 4.0, 6.0, 4.0]);
    }

    #[test]
    fn zero_kernel_gives_bias() {
        let x = Tensor::<f64>::from_vec((0..50).map(|v| v as f64 * 0.3 - 2.0).collect(), &[1, 2, 5, 5]).unwrap();
        let w = Tensor::<f64>::zeros(&[3, 2, 3, 3]).unwrap();
        let b = Tensor::<f64>::from_vec(vec![0.5, -1.0, 2.0], &[3]).unwrap();
        let y = x.conv2d(&w, &b).unwrap();
        for (fi, &bv) in [0.5, -1.0, 2.0].iter().enumerate() {
            assert!(y.data()[fi * 25..(fi + 1) * 25].iter().all(|&v| v == bv));
        }
    }

    #[test]
    fn pointwise_conv_is_affine() {
        let x = Tensor::<f64>::from_vec(vec![1.0, 2.0, 3.0, 4.0], &[1, 1, 2, 2]).unwrap();
        let w = Tensor::<f64>::from_vec(vec![2.0], &[1, 1, 1, 1]).unwrap();
        let b = Tensor::<f64>::from_vec(vec![1.0], &[1]).unwrap();
        assert_eq!(x.conv2d(&w, &b).unwrap().data(), &[3.0, 5.0, 7.0, 9.0]);
    }

    #[test]
    fn conv_channel_mismatch_names_axis() {
        let x = Tensor::<f64>::zeros(&[1, 2, 4, 4]).unwrap();
        let w = Tensor::<f64>::zeros(&[1, 3, 3, 3]).unwrap();
        let b = Tensor::<f64>::zeros(&[1]).unwrap();
        match x.conv2d(&w, &b) {
            Err(TensorError::Dimension { axes, .. }) => assert!(axes.contains("input channels")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn transpose_single_pixel() {
        let x = Tensor::<f64>::from_vec(vec![5.0], &[1, 1, 1, 1]).unwrap();
        let w = Tensor::<f64>::ones(&[1, 1, 2, 2]).unwrap();
        let b = Tensor::<f64>::zeros(&[1]).unwrap();
        let y = x.conv_transpose2d(&w, &b).unwrap();
        assert_eq!(y.dims(), &[1, 1, 2, 2]);
        assert_eq!(y.data(), &[5.0; 4]);
    }

    #[test]
    fn transpose_zero_weight_doubles_with_zeros() {
        let x = Tensor::<f64>::ones(&[2, 3, 3, 4]).unwrap();
        let w = Tensor::<f64>::zeros(&[3, 2, 2, 2]).unwrap();
        let b = Tensor::<f64>::zeros(&[2]).unwrap();
        let y = x.conv_transpose2d(&w, &b).unwrap();
        assert_eq!(y.dims(), &[2, 2, 6, 8]);
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn transpose_input_gradient_of_sum_with_ones_kernel() {
        let x = Tensor::<f64>::param(vec![0.1, -0.7, 2.0, 0.3], &[1, 1, 2, 2]).unwrap();
        let w = Tensor::<f64>::ones(&[1, 1, 2, 2]).unwrap();
        let b = Tensor::<f64>::zeros(&[1]).unwrap();
        let s = x.conv_transpose2d(&w, &b).unwrap().sum_all().unwrap();
        let g = backward(&s, &[x], false).unwrap();
        assert_eq!(g.grads[0].data(), &[4.0; 4]);
    }

    #[test]
    fn flip_transpose_is_involution() {
        let w = Tensor::<f64>::from_vec((0..54).map(f64::from).collect(), &[2, 3, 3, 3]).unwrap();
        let back = w.flip_transpose().unwrap().flip_transpose().unwrap();
        assert_eq!(back.data(), w.data());
    }
}
