//! Dense tensors with reverse-mode automatic differentiation.
//!
//! Every operation returns a fresh tensor and records, when any input requires
//! a gradient, a backward rule written in terms of other tensor operations.
//! Because backward rules are themselves differentiable, [`backward`] called
//! with `create_graph = true` yields gradients that can be differentiated
//! again, which is what the second-order meta-update relies on.
//!
//! Images use the `N x C x H x W` layout. Any op producing a NaN or an
//! infinity fails immediately with [`TensorError::NonFinite`].

use alloc::boxed::Box;
use alloc::format;
use alloc::rc::Rc;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::sync::atomic::{AtomicUsize, Ordering};

use crate::scalar::Real;

mod check;
mod conv;
mod graph;
mod norm;
mod ops;
mod pool;

pub use check::{fd_gradient, max_abs_diff, rel_error};
pub use graph::{backward, Gradients};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TensorError {
    #[error("{op}: dimension mismatch on {axes}: {lhs:?} vs {rhs:?}")]
    Dimension {
        op: &'static str,
        axes: String,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: invalid shape {dims:?}: {reason}")]
    InvalidShape {
        op: &'static str,
        dims: Vec<usize>,
        reason: String,
    },
    #[error("{op} produced non-finite values ({stats})")]
    NonFinite { op: &'static str, stats: String },
    #[error("backward needs a single-element output, got shape {0:?}")]
    NonScalar(Vec<usize>),
}

pub type Result<T, E = TensorError> = core::result::Result<T, E>;

/// Extents of a tensor of rank 1 to 4.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape {
    dims: [usize; 4],
    rank: usize,
}

impl Shape {
    pub fn new(dims: &[usize]) -> Result<Self> {
        if dims.is_empty() || dims.len() > 4 {
            return Err(TensorError::InvalidShape {
                op: "shape",
                dims: dims.to_vec(),
                reason: "rank must be between 1 and 4".into(),
            });
        }
        if dims.contains(&0) {
            return Err(TensorError::InvalidShape {
                op: "shape",
                dims: dims.to_vec(),
                reason: "extents must be positive".into(),
            });
        }
        let mut out = [1; 4];
        out[..dims.len()].copy_from_slice(dims);
        Ok(Shape {
            dims: out,
            rank: dims.len(),
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims[..self.rank]
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn numel(&self) -> usize {
        self.dims().iter().product()
    }

    /// `(N, C, H, W)` for rank-4 shapes.
    pub fn nchw(&self) -> Option<(usize, usize, usize, usize)> {
        (self.rank == 4).then(|| (self.dims[0], self.dims[1], self.dims[2], self.dims[3]))
    }

    pub(crate) fn expect_nchw(&self, op: &'static str) -> Result<(usize, usize, usize, usize)> {
        self.nchw().ok_or_else(|| TensorError::InvalidShape {
            op,
            dims: self.dims().to_vec(),
            reason: "expected rank 4 (N x C x H x W)".into(),
        })
    }
}

impl fmt::Debug for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.dims()).finish()
    }
}

pub(crate) type BackwardFn<T> = Box<dyn Fn(&Tensor<T>, &[Tensor<T>], &[bool]) -> Result<Vec<Option<Tensor<T>>>>>;

pub(crate) struct GradFn<T: Real> {
    pub(crate) op: &'static str,
    pub(crate) inputs: Vec<Tensor<T>>,
    pub(crate) backward: BackwardFn<T>,
}

pub(crate) struct Node<T: Real> {
    pub(crate) id: usize,
    pub(crate) shape: Shape,
    pub(crate) data: Rc<Vec<T>>,
    pub(crate) requires_grad: bool,
    pub(crate) grad_fn: Option<GradFn<T>>,
}

static NEXT_ID: AtomicUsize = AtomicUsize::new(0);

fn next_id() -> usize {
    NEXT_ID.fetch_add(1, Ordering::Relaxed)
}

/// A node in a differentiation graph. Cloning is cheap and shares the node.
pub struct Tensor<T: Real>(pub(crate) Rc<Node<T>>);

impl<T: Real> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor(Rc::clone(&self.0))
    }
}

impl<T: Real> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut s = f.debug_struct("Tensor");
        s.field("shape", &self.0.shape)
            .field("requires_grad", &self.0.requires_grad);
        if let Some(g) = &self.0.grad_fn {
            s.field("op", &g.op);
        }
        if self.numel() <= 16 {
            s.field("data", &self.data());
        }
        s.finish()
    }
}

impl<T: Real> Tensor<T> {
    fn leaf(data: Vec<T>, dims: &[usize], requires_grad: bool) -> Result<Self> {
        let shape = Shape::new(dims)?;
        if shape.numel() != data.len() {
            return Err(TensorError::InvalidShape {
                op: "from_vec",
                dims: dims.to_vec(),
                reason: format!("data length {} does not match", data.len()),
            });
        }
        check_finite("from_vec", &data, &[])?;
        Ok(Tensor(Rc::new(Node {
            id: next_id(),
            shape,
            data: Rc::new(data),
            requires_grad,
            grad_fn: None,
        })))
    }

    /// A constant (no gradient tracked).
    pub fn from_vec(data: Vec<T>, dims: &[usize]) -> Result<Self> {
        Self::leaf(data, dims, false)
    }

    /// A graph leaf that gradients can be taken with respect to.
    pub fn param(data: Vec<T>, dims: &[usize]) -> Result<Self> {
        Self::leaf(data, dims, true)
    }

    pub fn scalar(v: T) -> Self {
        Self::from_vec(vec![v], &[1]).expect("finite scalar")
    }

    pub fn full(dims: &[usize], v: T) -> Result<Self> {
        let n = Shape::new(dims)?.numel();
        Self::from_vec(vec![v; n], dims)
    }

    pub fn zeros(dims: &[usize]) -> Result<Self> {
        Self::full(dims, T::zero())
    }

    pub fn ones(dims: &[usize]) -> Result<Self> {
        Self::full(dims, T::one())
    }

    pub(crate) fn constant_with_shape(data: Vec<T>, shape: Shape) -> Self {
        debug_assert_eq!(data.len(), shape.numel());
        Tensor(Rc::new(Node {
            id: next_id(),
            shape,
            data: Rc::new(data),
            requires_grad: false,
            grad_fn: None,
        }))
    }

    /// Builds an op output, recording `backward` when any input needs a gradient.
    pub(crate) fn from_op<F>(
        op: &'static str,
        data: Vec<T>,
        shape: Shape,
        inputs: &[&Tensor<T>],
        backward: F,
    ) -> Result<Self>
    where
        F: Fn(&Tensor<T>, &[Tensor<T>], &[bool]) -> Result<Vec<Option<Tensor<T>>>> + 'static,
    {
        debug_assert_eq!(data.len(), shape.numel());
        check_finite(op, &data, inputs)?;
        let requires_grad = inputs.iter().any(|t| t.requires_grad());
        let grad_fn = requires_grad.then(|| GradFn {
            op,
            inputs: inputs.iter().map(|t| (*t).clone()).collect(),
            backward: Box::new(backward),
        });
        Ok(Tensor(Rc::new(Node {
            id: next_id(),
            shape,
            data: Rc::new(data),
            requires_grad,
            grad_fn,
        })))
    }

    pub fn id(&self) -> usize {
        self.0.id
    }

    pub fn shape(&self) -> &Shape {
        &self.0.shape
    }

    pub fn dims(&self) -> &[usize] {
        self.0.shape.dims()
    }

    pub fn numel(&self) -> usize {
        self.0.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.0.data
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.0.data.to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    /// Name of the op that produced this tensor, if it is tracked.
    pub fn op_name(&self) -> Option<&'static str> {
        self.0.grad_fn.as_ref().map(|g| g.op)
    }

    /// First element; intended for single-element tensors.
    pub fn item(&self) -> T {
        self.0.data[0]
    }

    /// Same values, cut from the graph. The data buffer is shared.
    pub fn detach(&self) -> Self {
        if !self.requires_grad() {
            return self.clone();
        }
        Tensor(Rc::new(Node {
            id: next_id(),
            shape: self.0.shape,
            data: Rc::clone(&self.0.data),
            requires_grad: false,
            grad_fn: None,
        }))
    }

    /// Detached copy that is itself a gradient leaf.
    pub fn detach_param(&self) -> Self {
        Tensor(Rc::new(Node {
            id: next_id(),
            shape: self.0.shape,
            data: Rc::clone(&self.0.data),
            requires_grad: true,
            grad_fn: None,
        }))
    }
}

fn check_finite<T: Real>(op: &'static str, data: &[T], inputs: &[&Tensor<T>]) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        return Ok(());
    }
    let bad = data.iter().filter(|v| !v.is_finite()).count();
    let mut stats = format!("{bad} of {} outputs non-finite", data.len());
    for (i, t) in inputs.iter().enumerate() {
        let (lo, hi, mean) = summarize(t.data());
        stats.push_str(&format!(
            "; input {i} {:?} min {lo:e} max {hi:e} mean {mean:e}",
            t.shape()
        ));
    }
    Err(TensorError::NonFinite { op, stats })
}

fn summarize<T: Real>(data: &[T]) -> (f64, f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut sum = 0.0;
    for v in data {
        let v = v.as_f64();
        lo = lo.min(v);
        hi = hi.max(v);
        sum += v;
    }
    (lo, hi, sum / data.len().max(1) as f64)
}

pub(crate) fn dim_mismatch(op: &'static str, axes: &str, lhs: &Shape, rhs: &Shape) -> TensorError {
    TensorError::Dimension {
        op,
        axes: axes.into(),
        lhs: lhs.dims().to_vec(),
        rhs: rhs.dims().to_vec(),
    }
}
