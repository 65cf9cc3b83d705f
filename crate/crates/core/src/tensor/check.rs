//! Finite-difference oracle and error measures for gradient checks.

use alloc::vec::Vec;

use super::{Result, Tensor};
use crate::scalar::Real;

/// Central-difference gradient `(f(x + h e_i) - f(x - h e_i)) / 2h` of a
/// scalar function, one element at a time. `f` receives constant tensors.
pub fn fd_gradient<T, F>(mut f: F, x: &Tensor<T>, h: T) -> Result<Tensor<T>>
where
    T: Real,
    F: FnMut(&Tensor<T>) -> Result<Tensor<T>>,
{
    assert!(h > T::zero(), "finite-difference step must be positive");
    let base = x.to_vec();
    let mut out = Vec::with_capacity(base.len());
    let mut probe = base.clone();
    for i in 0..base.len() {
        probe[i] = base[i] + h;
        let up = f(&Tensor::from_vec(probe.clone(), x.dims())?)?.item();
        probe[i] = base[i] - h;
        let down = f(&Tensor::from_vec(probe.clone(), x.dims())?)?.item();
        probe[i] = base[i];
        out.push((up - down) / (h + h));
    }
    Tensor::from_vec(out, x.dims())
}

/// `max |a - b| / max(max |a|, max |b|, floor)`.
///
/// Relative to the tensor's own scale, so tiny entries of a gradient do not
/// dominate the measure.
pub fn rel_error<T: Real>(a: &[T], b: &[T], floor: f64) -> f64 {
    assert_eq!(a.len(), b.len());
    let mut diff = 0.0f64;
    let mut scale = floor;
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x.as_f64(), y.as_f64());
        diff = diff.max((x - y).abs());
        scale = scale.max(x.abs()).max(y.abs());
    }
    diff / scale
}

pub fn max_abs_diff<T: Real>(a: &[T], b: &[T]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x.as_f64() - y.as_f64()).abs())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::backward;

    #[test]
    fn fd_of_sum_is_ones() {
        let x = Tensor::<f64>::from_vec(alloc::vec![0.3, -2.0, 5.5], &[3]).unwrap();
        // a power-of-two step keeps every difference exact
        let g = fd_gradient(|t| t.sum_all(), &x, 1.0 / 1024.0).unwrap();
        assert!(g.data().iter().all(|&v| v == 1.0));
        let g = fd_gradient(|t| t.sum_all(), &x, 1e-4).unwrap();
        assert!(g.data().iter().all(|&v| (v - 1.0).abs() < 1e-10));
    }

    #[test]
    fn fd_of_square() {
        let x = Tensor::<f64>::scalar(3.0);
        let g = fd_gradient(|t| t.square(), &x, 1e-4).unwrap();
        assert!((g.item() - 6.0).abs() <= 1e-6);
    }

    #[test]
    fn fd_agrees_with_backward_on_composite() {
        let data = alloc::vec![0.4, -0.2, 1.3, 0.7];
        let f = |t: &Tensor<f64>| t.sigmoid()?.mul(t)?.sqrt()?.sum_all();
        let f_abs = |t: &Tensor<f64>| t.abs()?.add_scalar(0.1)?.sqrt()?.mul(&t.sigmoid()?)?.sum_all();
        for func in [&f as &dyn Fn(&Tensor<f64>) -> Result<Tensor<f64>>, &f_abs] {
            let x = Tensor::param(data.iter().map(|v: &f64| v.abs()).collect(), &[4]).unwrap();
            let g = backward(&func(&x).unwrap(), core::slice::from_ref(&x), false).unwrap();
            let n = fd_gradient(|t| func(t), &x, 1e-4).unwrap();
            assert!(rel_error(g.grads[0].data(), n.data(), 1e-12) < 1e-5);
        }
    }

    #[test]
    fn second_derivative_of_cube() {
        let x = Tensor::<f64>::param(alloc::vec![2.0], &[1]).unwrap();
        let y = x.mul(&x).unwrap().mul(&x).unwrap();
        let dy = backward(&y, core::slice::from_ref(&x), true).unwrap().grads.remove(0);
        assert_eq!(dy.item(), 12.0);
        let d2y = backward(&dy, &[x], false).unwrap().grads.remove(0);
        assert_eq!(d2y.item(), 12.0);
    }

    #[test]
    fn square_gradient() {
        let x = Tensor::<f64>::param(alloc::vec![3.0], &[1]).unwrap();
        let g = backward(&x.square().unwrap(), &[x], false).unwrap();
        assert_eq!(g.grads[0].item(), 6.0);
    }
}
