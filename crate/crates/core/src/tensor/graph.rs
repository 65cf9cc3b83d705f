use alloc::collections::{BTreeMap, BTreeSet};
use alloc::rc::Rc;
use alloc::vec;
use alloc::vec::Vec;

use super::{GradFn, Node, Result, Tensor, TensorError};
use crate::scalar::Real;

/// Result of [`backward`]: one gradient per requested tensor.
#[derive(Debug, Clone)]
pub struct Gradients<T: Real> {
    pub grads: Vec<Tensor<T>>,
    /// Positions in `wrt` that do not reach the output (detached or unused).
    /// Their gradient is reported as zeros.
    pub detached: Vec<usize>,
}

impl<T: Real> Gradients<T> {
    pub fn into_vec(self) -> Vec<Tensor<T>> {
        self.grads
    }
}

/// Reverse-mode gradient of a single-element `output` with respect to `wrt`.
///
/// Nodes are visited in decreasing creation order, which is a valid reverse
/// topological order because a node is always created after its inputs. With
/// `create_graph` the returned gradients are themselves tracked and can be
/// differentiated again; otherwise they are constants.
pub fn backward<T: Real>(output: &Tensor<T>, wrt: &[Tensor<T>], create_graph: bool) -> Result<Gradients<T>> {
    if output.numel() != 1 {
        return Err(TensorError::NonScalar(output.dims().to_vec()));
    }

    let mut nodes: BTreeMap<usize, Tensor<T>> = BTreeMap::new();
    if output.requires_grad() {
        let mut stack = vec![output.clone()];
        while let Some(t) = stack.pop() {
            if nodes.contains_key(&t.id()) {
                continue;
            }
            if let Some(gf) = &t.0.grad_fn {
                for input in &gf.inputs {
                    if input.requires_grad() && !nodes.contains_key(&input.id()) {
                        stack.push(input.clone());
                    }
                }
            }
            nodes.insert(t.id(), t);
        }
    }

    let wanted: BTreeSet<usize> = wrt.iter().map(Tensor::id).collect();
    let mut pending: BTreeMap<usize, Tensor<T>> = BTreeMap::new();
    let mut kept: BTreeMap<usize, Tensor<T>> = BTreeMap::new();
    pending.insert(output.id(), Tensor::ones(output.dims())?);

    for (id, node) in nodes.iter().rev() {
        let Some(grad) = pending.remove(id) else {
            continue;
        };
        if wanted.contains(id) {
            kept.insert(*id, grad.clone());
        }
        let Some(gf) = &node.0.grad_fn else {
            continue;
        };
        let needs: Vec<bool> = gf.inputs.iter().map(Tensor::requires_grad).collect();
        let input_grads = if create_graph {
            (gf.backward)(&grad, &gf.inputs, &needs)?
        } else {
            let inputs: Vec<Tensor<T>> = gf.inputs.iter().map(Tensor::detach).collect();
            (gf.backward)(&grad.detach(), &inputs, &needs)?
        };
        for ((input, need), g) in gf.inputs.iter().zip(&needs).zip(input_grads) {
            let (true, Some(g)) = (*need, g) else {
                continue;
            };
            debug_assert_eq!(g.shape(), input.shape(), "gradient shape of {}", gf.op);
            let acc = match pending.remove(&input.id()) {
                Some(prev) => prev.add(&g)?,
                None => g,
            };
            pending.insert(input.id(), acc);
        }
    }

    let mut grads = Vec::with_capacity(wrt.len());
    let mut detached = Vec::new();
    for (i, t) in wrt.iter().enumerate() {
        match kept.get(&t.id()) {
            Some(g) => grads.push(g.clone()),
            None => {
                detached.push(i);
                grads.push(Tensor::zeros(t.dims())?);
            }
        }
    }
    Ok(Gradients { grads, detached })
}

impl<T: Real> Drop for Node<T> {
    // Long op chains would otherwise be torn down recursively.
    fn drop(&mut self) {
        let Some(GradFn { inputs, .. }) = self.grad_fn.take() else {
            return;
        };
        let mut stack = inputs;
        while let Some(t) = stack.pop() {
            if let Ok(mut node) = Rc::try_unwrap(t.0) {
                if let Some(gf) = node.grad_fn.take() {
                    stack.extend(gf.inputs);
                }
            }
        }
    }
}
