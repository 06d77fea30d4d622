//! Reverse-mode automatic differentiation over dense tensors.
//!
//! A [`Tape`] records every operation of a forward pass; [`Tape::backward`]
//! replays the records in reverse and accumulates gradients into each leaf
//! created with `requires_grad = true`. The engine is generic over `f32`
//! (the training path) and `f64` (the finite-difference oracle in
//! [`check`]), so the gradients the oracle certifies are computed by the
//! exact same code that training runs.
//!
//! Tapes are single-threaded by design: one tape per training step, no
//! shared state, bit-reproducible results for identical inputs.

pub mod check;
mod ops;

use std::cell::RefCell;
use std::fmt;

use crate::error::{Error, Result};

/// Element type of tensors on a tape.
pub trait Scalar:
    num_traits::Float
    + num_traits::NumAssign
    + num_traits::FromPrimitive
    + Default
    + fmt::Debug
    + fmt::Display
    + 'static
{
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Shorthand for converting a literal into the tape's element type.
pub(crate) fn lit<T: Scalar>(x: f64) -> T {
    T::from_f64(x).expect("literal conversion")
}

/// Plain dense tensor: the master storage for model parameters and any
/// value that lives outside a tape.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "tensor data length must match shape product"
        );
        Tensor { shape, data }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn full(shape: Vec<usize>, value: f32) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![value; n],
        }
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }
}

pub(crate) struct Node<T> {
    pub shape: Vec<usize>,
    pub data: Vec<T>,
    pub grad: Vec<T>,
    pub requires_grad: bool,
    pub op: ops::Op<T>,
}

pub(crate) struct TapeInner<T> {
    pub nodes: Vec<Node<T>>,
    pub backward_done: bool,
}

/// Records a forward computation for later gradient replay.
pub struct Tape<T: Scalar> {
    pub(crate) inner: RefCell<TapeInner<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Handle to one value on a tape. Copyable; all operations go through it.
#[derive(Copy, Clone)]
pub struct Var<'t, T: Scalar> {
    pub(crate) tape: &'t Tape<T>,
    pub(crate) idx: usize,
}

impl<T: Scalar> fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var")
            .field("idx", &self.idx)
            .field("shape", &self.shape())
            .finish()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            inner: RefCell::new(TapeInner {
                nodes: Vec::new(),
                backward_done: false,
            }),
        }
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub(crate) fn push(&self, node: Node<T>) -> Var<'_, T> {
        let mut inner = self.inner.borrow_mut();
        inner.nodes.push(node);
        Var {
            tape: self,
            idx: inner.nodes.len() - 1,
        }
    }

    /// Create a leaf from raw data.
    pub fn leaf(&self, shape: &[usize], data: &[T], requires_grad: bool) -> Var<'_, T> {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "leaf data length must match shape product"
        );
        self.push(Node {
            shape: shape.to_vec(),
            data: data.to_vec(),
            grad: Vec::new(),
            requires_grad,
            op: ops::Op::Leaf,
        })
    }

    /// Create a scalar constant leaf.
    pub fn scalar(&self, value: T) -> Var<'_, T> {
        self.leaf(&[1], &[value], false)
    }

    /// Propagate gradients from a scalar loss back to every leaf that
    /// requires them. May be called once per tape.
    pub fn backward(&self, loss: Var<'_, T>) -> Result<()> {
        debug_assert!(std::ptr::eq(loss.tape, self), "loss from another tape");
        let mut inner = self.inner.borrow_mut();
        if inner.backward_done {
            return Err(Error::BackwardTwice);
        }
        {
            let node = &inner.nodes[loss.idx];
            if node.data.len() != 1 {
                return Err(Error::NonScalarLoss {
                    shape: node.shape.clone(),
                });
            }
            if !node.requires_grad {
                return Err(Error::DetachedGraph);
            }
        }
        inner.backward_done = true;
        inner.nodes[loss.idx].grad = vec![T::one()];
        for i in (0..=loss.idx).rev() {
            let (head, tail) = inner.nodes.split_at_mut(i);
            let node = &mut tail[0];
            // Leaves keep their accumulated gradient; interior nodes are
            // drained as soon as they have been propagated.
            if node.grad.is_empty() || !node.requires_grad || matches!(node.op, ops::Op::Leaf) {
                continue;
            }
            ops::backward_node(node, head);
        }
        Ok(())
    }
}

impl<'t, T: Scalar> Var<'t, T> {
    pub fn shape(&self) -> Vec<usize> {
        self.tape.inner.borrow().nodes[self.idx].shape.clone()
    }

    pub fn numel(&self) -> usize {
        self.tape.inner.borrow().nodes[self.idx].data.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.inner.borrow().nodes[self.idx].requires_grad
    }

    /// Copy of the forward value.
    pub fn value(&self) -> Vec<T> {
        self.tape.inner.borrow().nodes[self.idx].data.clone()
    }

    /// The forward value of a single-element tensor.
    pub fn scalar_value(&self) -> T {
        let inner = self.tape.inner.borrow();
        let node = &inner.nodes[self.idx];
        assert_eq!(node.data.len(), 1, "scalar_value on non-scalar");
        node.data[0]
    }

    /// Copy of the accumulated gradient, if backward reached this node.
    pub fn grad(&self) -> Option<Vec<T>> {
        let inner = self.tape.inner.borrow();
        let g = &inner.nodes[self.idx].grad;
        if g.is_empty() {
            None
        } else {
            Some(g.clone())
        }
    }

    pub(crate) fn same_tape(&self, other: &Var<'t, T>) -> bool {
        std::ptr::eq(self.tape, other.tape)
    }
}

impl<'t> Var<'t, f32> {
    /// Leaf from a master [`Tensor`].
    pub fn from_tensor(tape: &'t Tape<f32>, t: &Tensor, requires_grad: bool) -> Var<'t, f32> {
        tape.leaf(&t.shape, &t.data, requires_grad)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backward_of_sum_is_ones() {
        let tape: Tape<f64> = Tape::new();
        let x = tape.leaf(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], true);
        let loss = x.sum();
        tape.backward(loss).unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0; 6]);
    }

    #[test]
    fn backward_of_square_is_two_x() {
        let tape: Tape<f64> = Tape::new();
        let x = tape.leaf(&[1], &[3.0], true);
        let loss = x.mul(x).unwrap().sum();
        tape.backward(loss).unwrap();
        assert_eq!(x.grad().unwrap(), vec![6.0]);
    }

    #[test]
    fn second_backward_is_an_error() {
        let tape: Tape<f64> = Tape::new();
        let x = tape.leaf(&[1], &[2.0], true);
        let loss = x.sum();
        tape.backward(loss).unwrap();
        assert!(matches!(tape.backward(loss), Err(Error::BackwardTwice)));
    }

    #[test]
    fn non_scalar_loss_is_an_error() {
        let tape: Tape<f64> = Tape::new();
        let x = tape.leaf(&[2], &[1.0, 2.0], true);
        assert!(matches!(
            tape.backward(x),
            Err(Error::NonScalarLoss { .. })
        ));
    }

    #[test]
    fn detached_graph_is_an_error() {
        let tape: Tape<f64> = Tape::new();
        let x = tape.leaf(&[1], &[2.0], false);
        let loss = x.sum();
        assert!(matches!(tape.backward(loss), Err(Error::DetachedGraph)));
    }

    #[test]
    fn forward_is_reproducible() {
        let run = || {
            let tape: Tape<f32> = Tape::new();
            let x = tape.leaf(&[4], &[0.1, -0.7, 1.3, 2.9], true);
            x.sigmoid().mul(x.exp()).unwrap().sum().scalar_value()
        };
        assert_eq!(run().to_bits(), run().to_bits());
    }
}
