//! Define-by-run reverse-mode differentiation.
//!
//! A [`Tape`] records every operation applied to [`Var`]s. Each recorded node
//! keeps its forward value plus a [`Backward`] rule that maps the gradient of
//! its output to gradients of its inputs. All kernels are single-threaded and
//! visit elements in a fixed order, so repeated runs are bit-identical.

mod conv;
mod ops;
mod resample;
mod softmax;

use std::cell::{Cell, RefCell};
use std::rc::Rc;

use crate::tensor::{Real, Tensor};

pub use conv::{Conv2dSpec, Conv3dSpec};

pub trait Backward<T: Real> {
    /// One gradient per parent, in the order the parents were recorded.
    /// Entries whose `needs` flag is false may be `None`.
    fn backward(&self, grad: &Tensor<T>, needs: &[bool]) -> Vec<Option<Tensor<T>>>;
}

struct Node<T: Real> {
    value: Rc<Tensor<T>>,
    parents: Vec<usize>,
    rule: Option<Box<dyn Backward<T>>>,
    requires_grad: bool,
}

pub struct Tape<T: Real> {
    nodes: RefCell<Vec<Node<T>>>,
    flops: Cell<u64>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
            flops: Cell::new(0),
        }
    }

    /// Input that never receives a gradient.
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.insert(value, Vec::new(), None, false)
    }

    /// Input whose gradient is collected by [`Tape::backward`].
    pub fn leaf(&self, value: Tensor<T>) -> Var<'_, T> {
        self.insert(value, Vec::new(), None, true)
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Multiply-accumulate work executed by convolution kernels so far, in FLOPs.
    pub fn flops(&self) -> u64 {
        self.flops.get()
    }

    pub(crate) fn add_flops(&self, f: u64) {
        self.flops.set(self.flops.get() + f);
    }

    pub(crate) fn record<'t>(
        &'t self,
        value: Tensor<T>,
        parents: &[Var<'t, T>],
        rule: impl Backward<T> + 'static,
    ) -> Var<'t, T> {
        let requires_grad = {
            let nodes = self.nodes.borrow();
            parents.iter().any(|p| nodes[p.id].requires_grad)
        };
        let ids = parents.iter().map(|p| p.id).collect();
        let rule: Option<Box<dyn Backward<T>>> = if requires_grad {
            Some(Box::new(rule))
        } else {
            None
        };
        self.insert(value, ids, rule, requires_grad)
    }

    fn insert(
        &self,
        value: Tensor<T>,
        parents: Vec<usize>,
        rule: Option<Box<dyn Backward<T>>>,
        requires_grad: bool,
    ) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            parents,
            rule,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// Gradients of a scalar `root` with respect to every leaf.
    pub fn backward(&self, root: Var<'_, T>) -> Gradients<T> {
        let shape = root.shape();
        assert_eq!(
            shape.iter().product::<usize>(),
            1,
            "backward() needs a scalar root, got {shape:?}; use backward_seeded"
        );
        self.backward_seeded(root, Tensor::full(&shape, T::one()))
    }

    /// Vector-Jacobian product: propagates `seed` (shaped like `root`) to the leaves.
    pub fn backward_seeded(&self, root: Var<'_, T>, seed: Tensor<T>) -> Gradients<T> {
        let nodes = self.nodes.borrow();
        assert_eq!(seed.shape(), nodes[root.id].value.shape(), "seed shape");
        let mut grads: Vec<Option<Tensor<T>>> = (0..nodes.len()).map(|_| None).collect();
        if !nodes[root.id].requires_grad {
            return Gradients { grads };
        }
        grads[root.id] = Some(seed);
        for id in (0..=root.id).rev() {
            let node = &nodes[id];
            let Some(rule) = node.rule.as_ref() else {
                continue;
            };
            let Some(grad) = grads[id].take() else {
                continue;
            };
            let needs: Vec<bool> = node
                .parents
                .iter()
                .map(|&p| nodes[p].requires_grad)
                .collect();
            let parent_grads = rule.backward(&grad, &needs);
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for ((&p, g), need) in node.parents.iter().zip(parent_grads).zip(needs) {
                let Some(g) = g else { continue };
                if !need {
                    continue;
                }
                debug_assert_eq!(g.shape(), nodes[p].value.shape(), "grad shape of node {p}");
                match grads[p].as_mut() {
                    Some(acc) => acc.add_assign(&g),
                    None => grads[p] = Some(g),
                }
            }
        }
        Gradients { grads }
    }
}

/// Leaf gradients produced by one backward sweep.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, var: Var<'_, T>) -> Option<&Tensor<T>> {
        self.grads.get(var.id).and_then(|g| g.as_ref())
    }

    /// Gradient of `var`, or zeros when nothing flowed into it.
    pub fn get_or_zeros(&self, var: Var<'_, T>) -> Tensor<T> {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(&var.shape()))
    }

    pub fn take(&mut self, var: Var<'_, T>) -> Option<Tensor<T>> {
        self.grads.get_mut(var.id).and_then(|g| g.take())
    }
}

/// Handle to a value recorded on a [`Tape`].
pub struct Var<'t, T: Real> {
    tape: &'t Tape<T>,
    id: usize,
}

impl<T: Real> Clone for Var<'_, T> {
    fn clone(&self) -> Self {
        *self
    }
}

impl<T: Real> Copy for Var<'_, T> {}

impl<T: Real> std::fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

impl<'t, T: Real> Var<'t, T> {
    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn value(&self) -> Rc<Tensor<T>> {
        self.tape.nodes.borrow()[self.id].value.clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }
}
