use alloc::rc::Rc;
use alloc::vec;
use alloc::vec::Vec;

use super::{Result, Shape, Tensor, TensorError};
use crate::scalar::Real;

impl<T: Real> Tensor<T> {
    /// 2x2 max pooling with stride 2. The gradient goes to the first maximum of
    /// each window in row-major order.
    pub fn maxpool2(&self) -> Result<Tensor<T>> {
        let (n, c, h, w) = self.shape().expect_nchw("maxpool2")?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(TensorError::InvalidShape {
                op: "maxpool2",
                dims: self.dims().to_vec(),
                reason: "height and width must be even".into(),
            });
        }
        let (oh, ow) = (h / 2, w / 2);
        let x = self.data();
        let mut idx = Vec::with_capacity(n * c * oh * ow);
        for plane in 0..n * c {
            let base = plane * h * w;
            for i in 0..oh {
                for j in 0..ow {
                    let top = base + 2 * i * w + 2 * j;
                    let mut best = top;
                    for cand in [top + 1, top + w, top + w + 1] {
                        if x[cand] > x[best] {
                            best = cand;
                        }
                    }
                    idx.push(best);
                }
            }
        }
        self.gather(Rc::new(idx), Shape::new(&[n, c, oh, ow])?)
    }

    /// `out[i] = self[idx[i]]`.
    pub(crate) fn gather(&self, idx: Rc<Vec<usize>>, shape: Shape) -> Result<Tensor<T>> {
        let src = self.data();
        let data = idx.iter().map(|&i| src[i]).collect();
        let from = *self.shape();
        Tensor::from_op("gather", data, shape, &[self], move |g, _, _| {
            Ok(vec![Some(g.scatter(Rc::clone(&idx), from)?)])
        })
    }

    /// Zeros of `shape` with `out[idx[i]] += self[i]`.
    pub(crate) fn scatter(&self, idx: Rc<Vec<usize>>, shape: Shape) -> Result<Tensor<T>> {
        let mut out = vec![T::zero(); shape.numel()];
        for (&i, &v) in idx.iter().zip(self.data()) {
            out[i] += v;
        }
        let from = *self.shape();
        Tensor::from_op("scatter", out, shape, &[self], move |g, _, _| {
            Ok(vec![Some(g.gather(Rc::clone(&idx), from)?)])
        })
    }
}
