//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every operation of one forward pass. Nodes are
//! appended in creation order, which is a topological order of the graph
//! (an operation can only consume nodes that already exist), so a cycle
//! cannot be expressed. [`Tape::backward`] walks the nodes in reverse
//! creation order; for each node the input gradients are added into their
//! accumulators in the order the operation lists its inputs. That order is
//! fixed, so repeated runs produce bit-identical gradients.
//!
//! Operations are coarse (a whole convolution, a whole pooling layer) and
//! each implements [`Function`] for its backward rule.

mod activation;
mod adam;
mod basic;
mod batchnorm;
mod conv;
mod film;
mod linear;
mod pool;

pub use activation::Activation;
pub use adam::{adam_step, AdamConfig, AdamState};
pub use batchnorm::{BatchNormMode, BatchStats};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Backward rule of a recorded operation.
pub trait Function<T: Scalar>: Send + Sync {
    fn name(&self) -> &'static str;

    fn inputs(&self) -> Vec<Var>;

    /// Returns one gradient per entry of [`Function::inputs`], or `None`
    /// for inputs that do not need one.
    fn backward(&self, ctx: &BackwardCtx<'_, T>, grad_out: &[T]) -> Result<Vec<Option<Vec<T>>>>;
}

pub struct BackwardCtx<'a, T: Scalar> {
    tape: &'a Tape<T>,
    node: usize,
}

impl<T: Scalar> BackwardCtx<'_, T> {
    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.tape.nodes[v.0].value
    }

    /// Value of the node whose gradient is being propagated.
    pub fn output(&self) -> &Tensor<T> {
        &self.tape.nodes[self.node].value
    }

    pub fn needs_grad(&self, v: Var) -> bool {
        self.tape.nodes[v.0].requires_grad
    }
}

struct Node<T: Scalar> {
    value: Tensor<T>,
    requires_grad: bool,
    func: Option<Box<dyn Function<T>>>,
}

pub struct Tape<T: Scalar> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Adds a trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    /// Adds a leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            func: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Records an operation result. Used by the op implementations and by
    /// downstream modules that define their own differentiable layers.
    pub fn push(&mut self, value: Tensor<T>, func: Box<dyn Function<T>>) -> Result<Var> {
        let next = self.nodes.len();
        let mut requires_grad = false;
        for v in func.inputs() {
            if v.0 >= next {
                return Err(Error::Internal(format!(
                    "{} consumes node {} which does not precede it",
                    func.name(),
                    v.0
                )));
            }
            requires_grad |= self.nodes[v.0].requires_grad;
        }
        self.nodes.push(Node {
            value,
            requires_grad,
            func: requires_grad.then_some(func),
        });
        Ok(Var(next))
    }

    /// Back-propagates from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::dim(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            let Some(func) = node.func.as_ref() else {
                continue;
            };
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let ctx = BackwardCtx { tape: self, node: idx };
            let inputs = func.inputs();
            let input_grads = func.backward(&ctx, &g)?;
            for (v, ig) in inputs.into_iter().zip(input_grads) {
                let Some(ig) = ig else { continue };
                if !self.nodes[v.0].requires_grad {
                    continue;
                }
                if ig.len() != self.nodes[v.0].value.len() {
                    return Err(Error::Internal(format!(
                        "{} produced a gradient of length {} for a node of length {}",
                        func.name(),
                        ig.len(),
                        self.nodes[v.0].value.len()
                    )));
                }
                match &mut grads[v.0] {
                    Some(acc) => {
                        for (a, x) in acc.iter_mut().zip(&ig) {
                            *a = *a + *x;
                        }
                    }
                    slot @ None => *slot = Some(ig),
                }
            }
            // Non-leaf gradients are not kept once propagated.
        }
        let grads = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, n)| if n.func.is_none() { g } else { None })
            .collect();
        Ok(Gradients { grads })
    }
}

/// Gradients of a scalar loss with respect to the tape's leaves.
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of a leaf, or `None` when the loss does not depend on it.
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient of a leaf with zeros for unreachable leaves.
    pub fn get_or_zeros(&self, v: Var, len: usize) -> Vec<T> {
        self.get(v)
            .map(<[T]>::to_vec)
            .unwrap_or_else(|| vec![T::zero(); len])
    }
}
