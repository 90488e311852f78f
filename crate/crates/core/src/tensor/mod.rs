//! Dense tensors with reverse-mode differentiation.
//!
//! A [`Tensor`] is a reference-counted node: its value, whether it requires a
//! gradient, and (for non-leaves) the rule mapping the output gradient to
//! input gradients. Tensors that do not depend on any `requires_grad` leaf
//! carry no backward rule and keep no parents alive, so evaluation without
//! gradients frees intermediates as soon as they go out of scope.
//!
//! A graph is single-threaded (`Rc`). Independent graphs, one per sample or
//! per model instance, may be built on different threads.

mod array;
pub mod checkpoint;
pub(crate) mod ops;
pub mod optim;

use std::cell::{Ref, RefCell};
use std::collections::HashMap;
use std::fmt;
use std::rc::Rc;

pub use array::Array;

use crate::error::{Error, Result};
use crate::real::Real;

type BackwardFn<T> = Box<dyn Fn(&[&Array<T>], &Array<T>, &Array<T>) -> Vec<Option<Array<T>>>>;

struct GradFn<T> {
    name: &'static str,
    inputs: Vec<Tensor<T>>,
    backward: BackwardFn<T>,
}

struct Node<T> {
    value: Array<T>,
    requires_grad: bool,
    grad: RefCell<Option<Array<T>>>,
    grad_fn: Option<GradFn<T>>,
}

/// Operator with a user-supplied backward rule.
///
/// The backward rule does not need to be the derivative of `forward`:
/// straight-through operators pair a discrete forward with the Jacobian of a
/// smooth surrogate.
pub trait CustomOp<T: Real> {
    fn name(&self) -> &'static str;

    fn forward(&self, inputs: &[&Array<T>]) -> Result<Array<T>>;

    /// Returns one entry per input; `None` means no gradient flows there.
    fn backward(
        &self,
        inputs: &[&Array<T>],
        output: &Array<T>,
        grad_output: &Array<T>,
    ) -> Vec<Option<Array<T>>>;
}

pub struct Tensor<T>(Rc<Node<T>>);

impl<T> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor(Rc::clone(&self.0))
    }
}

impl<T: Real> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.0.value.shape())
            .field("requires_grad", &self.0.requires_grad)
            .field("op", &self.0.grad_fn.as_ref().map(|g| g.name))
            .finish()
    }
}

impl<T: Real> Tensor<T> {
    /// Leaf tensor; gradients accumulate into it when `requires_grad`.
    pub fn leaf(value: Array<T>, requires_grad: bool) -> Self {
        Tensor(Rc::new(Node {
            value,
            requires_grad,
            grad: RefCell::new(None),
            grad_fn: None,
        }))
    }

    pub fn param(value: Array<T>) -> Self {
        Self::leaf(value, true)
    }

    pub fn constant(value: Array<T>) -> Self {
        Self::leaf(value, false)
    }

    pub fn scalar(v: T) -> Self {
        Self::constant(Array::scalar(v))
    }

    pub fn value(&self) -> &Array<T> {
        &self.0.value
    }

    pub fn shape(&self) -> &[usize] {
        self.0.value.shape()
    }

    pub fn data(&self) -> &[T] {
        self.0.value.data()
    }

    pub fn item(&self) -> T {
        self.0.value.item()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.grad_fn.is_none()
    }

    /// Name of the operator that produced this tensor, if any.
    pub fn op_name(&self) -> Option<&'static str> {
        self.0.grad_fn.as_ref().map(|g| g.name)
    }

    pub fn grad(&self) -> Option<Ref<'_, Array<T>>> {
        let g = self.0.grad.borrow();
        if g.is_some() {
            Some(Ref::map(g, |g| g.as_ref().unwrap()))
        } else {
            None
        }
    }

    pub fn take_grad(&self) -> Option<Array<T>> {
        self.0.grad.borrow_mut().take()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    /// Copy of the value with no graph attached.
    pub fn detach(&self) -> Self {
        Self::constant(self.0.value.clone())
    }

    fn ptr(&self) -> *const Node<T> {
        Rc::as_ptr(&self.0)
    }

    /// Records an operator result. When no input requires a gradient the
    /// result is a constant and the inputs are not retained.
    pub(crate) fn from_op(
        name: &'static str,
        inputs: &[&Tensor<T>],
        value: Array<T>,
        backward: BackwardFn<T>,
    ) -> Self {
        let requires_grad = inputs.iter().any(|t| t.requires_grad());
        let grad_fn = requires_grad.then(|| GradFn {
            name,
            inputs: inputs.iter().map(|&t| t.clone()).collect(),
            backward,
        });
        Tensor(Rc::new(Node {
            value,
            requires_grad,
            grad: RefCell::new(None),
            grad_fn,
        }))
    }

    /// Applies a [`CustomOp`], registering its backward rule.
    pub fn apply_custom<O>(op: O, inputs: &[&Tensor<T>]) -> Result<Self>
    where
        O: CustomOp<T> + 'static,
    {
        let values: Vec<&Array<T>> = inputs.iter().map(|t| t.value()).collect();
        let out = op.forward(&values)?;
        let name = op.name();
        Ok(Self::from_op(
            name,
            inputs,
            out,
            Box::new(move |ins, out, g| op.backward(ins, out, g)),
        ))
    }

    /// Reverse-mode sweep from a scalar root.
    ///
    /// Nodes are visited in a fixed reverse topological order (depth-first,
    /// inputs in argument order), so gradient sums are reproducible bit for
    /// bit. Gradients are added to any gradient already stored on a node.
    pub fn backward(&self) -> Result<()> {
        if self.0.value.numel() != 1 {
            return Err(Error::NonScalarRoot(self.shape().to_vec()));
        }
        if !self.requires_grad() {
            return Err(Error::NoGradPath);
        }
        let order = self.topo_order();
        let mut pending: HashMap<*const Node<T>, Array<T>> = HashMap::new();
        pending.insert(self.ptr(), Array::ones(self.shape()));

        for node in order.iter().rev() {
            let Some(g) = pending.remove(&node.ptr()) else {
                continue;
            };
            if let Some(gf) = &node.0.grad_fn {
                let ins: Vec<&Array<T>> = gf.inputs.iter().map(|t| t.value()).collect();
                let grads = (gf.backward)(&ins, &node.0.value, &g);
                debug_assert_eq!(grads.len(), gf.inputs.len(), "{}", gf.name);
                for (input, ig) in gf.inputs.iter().zip(grads) {
                    let Some(ig) = ig else { continue };
                    if !input.requires_grad() {
                        continue;
                    }
                    debug_assert_eq!(ig.shape(), input.shape(), "{}", gf.name);
                    match pending.get_mut(&input.ptr()) {
                        Some(acc) => acc.add_assign(&ig),
                        None => {
                            pending.insert(input.ptr(), ig);
                        }
                    }
                }
            }
            let mut slot = node.0.grad.borrow_mut();
            match slot.as_mut() {
                Some(acc) => acc.add_assign(&g),
                None => *slot = Some(g),
            }
        }
        Ok(())
    }

    fn topo_order(&self) -> Vec<Tensor<T>> {
        let mut order = Vec::new();
        let mut seen = std::collections::HashSet::new();
        // (node, next input index to visit)
        let mut stack: Vec<(Tensor<T>, usize)> = vec![(self.clone(), 0)];
        seen.insert(self.ptr());
        while let Some((node, idx)) = stack.pop() {
            let inputs = node
                .0
                .grad_fn
                .as_ref()
                .map(|g| &g.inputs[..])
                .unwrap_or(&[]);
            if idx < inputs.len() {
                let child = inputs[idx].clone();
                stack.push((node, idx + 1));
                if child.requires_grad() && seen.insert(child.ptr()) {
                    stack.push((child, 0));
                }
            } else {
                order.push(node);
            }
        }
        order
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares_gradient() {
        let x = Tensor::param(Array::<f64>::vector(vec![1.0, 2.0, 3.0]));
        let y = x.mul(&x).unwrap().sum();
        y.backward().unwrap();
        assert_eq!(x.grad().unwrap().data(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn multi_use_accumulates() {
        let x = Tensor::param(Array::<f64>::vector(vec![1.0, -2.0]));
        let y = x.sum().add(&x.sum()).unwrap();
        y.backward().unwrap();
        assert_eq!(x.grad().unwrap().data(), &[2.0, 2.0]);
    }

    #[test]
    fn non_scalar_root_rejected() {
        let x = Tensor::param(Array::<f64>::vector(vec![1.0, 2.0]));
        let y = x.scale(2.0);
        assert!(matches!(y.backward(), Err(Error::NonScalarRoot(_))));
    }

    #[test]
    fn constant_root_rejected() {
        let x = Tensor::constant(Array::<f64>::vector(vec![1.0, 2.0]));
        assert!(matches!(x.sum().backward(), Err(Error::NoGradPath)));
    }

    #[test]
    fn constants_do_not_retain_parents() {
        let x = Tensor::constant(Array::<f32>::vector(vec![1.0, 2.0]));
        let y = x.scale(3.0).exp();
        assert!(y.is_leaf());
        assert!(!y.requires_grad());
    }

    #[test]
    fn repeated_backward_accumulates_on_leaves() {
        let x = Tensor::param(Array::<f64>::vector(vec![0.5]));
        x.scale(3.0).sum().backward().unwrap();
        x.scale(3.0).sum().backward().unwrap();
        assert_eq!(x.grad().unwrap().data(), &[6.0]);
        x.zero_grad();
        assert!(x.grad().is_none());
    }

    #[test]
    fn backward_is_bitwise_reproducible() {
        let run = || {
            let a = Tensor::param(Array::<f32>::from_fn(&[4, 3], |i| (i as f32 * 0.37).sin()));
            let b = Tensor::param(Array::<f32>::from_fn(&[3, 5], |i| (i as f32 * 0.11).cos()));
            let h = a.matmul(&b).unwrap().gelu();
            let loss = h
                .softmax_lastdim()
                .mul(&h)
                .unwrap()
                .sum()
                .add(&h.sum())
                .unwrap();
            loss.backward().unwrap();
            let ga = a.grad().unwrap().clone();
            let gb = b.grad().unwrap().clone();
            (ga, gb)
        };
        let (a1, b1) = run();
        let (a2, b2) = run();
        assert_eq!(a1, a2);
        assert_eq!(b1, b2);
    }
}
