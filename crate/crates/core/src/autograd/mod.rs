//! Reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! Operations are recorded on a [`Tape`] in execution order, so node ids are
//! already a topological order and the backward pass is a single reverse
//! sweep. A tape lives for one forward/backward cycle; parameters enter it as
//! leaves through [`Tape::param`] and their gradients are moved back into the
//! [`ParamStore`] with [`Tape::flush_param_grads`].

mod ops;

pub use ops::{concat, softmax};
pub(crate) use ops::sigmoid;

use std::cell::RefCell;
use std::collections::HashMap;
use std::fmt;

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Inputs handed to an operation's backward closure.
pub struct BackwardCtx<'a, T> {
    /// Gradient of the loss with respect to this node's output.
    pub grad: &'a [T],
    pub output: &'a Tensor<T>,
    pub inputs: Vec<&'a Tensor<T>>,
}

/// Returns one gradient buffer per input, in input order.
pub type BackwardFn<T> = Box<dyn Fn(&BackwardCtx<'_, T>) -> Vec<Vec<T>>>;

struct Node<T> {
    op: &'static str,
    value: Tensor<T>,
    parents: Vec<usize>,
    requires_grad: bool,
    backward: Option<BackwardFn<T>>,
}

pub struct Tape<T> {
    nodes: RefCell<Vec<Node<T>>>,
    grads: RefCell<Vec<Option<Vec<T>>>>,
    param_leaves: RefCell<HashMap<ParamId, usize>>,
}

/// A tensor recorded on a tape.
#[derive(Clone, Copy)]
pub struct Var<'t, T> {
    tape: &'t Tape<T>,
    id: usize,
}

impl<T> fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var({})", self.id)
    }
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
            grads: RefCell::new(Vec::new()),
            param_leaves: RefCell::new(HashMap::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, node: Node<T>) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(node);
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// A leaf that does not take part in differentiation.
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.constant_named("constant", value)
    }

    /// A constant leaf tagged with an op name, visible through [`Tape::has_op`].
    pub fn constant_named(&self, op: &'static str, value: Tensor<T>) -> Var<'_, T> {
        self.push(Node {
            op,
            value,
            parents: Vec::new(),
            requires_grad: false,
            backward: None,
        })
    }

    /// A leaf whose gradient is tracked.
    pub fn var(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push(Node {
            op: "leaf",
            value,
            parents: Vec::new(),
            requires_grad: true,
            backward: None,
        })
    }

    /// The leaf for a stored parameter. Repeated calls return the same leaf,
    /// so every use of a parameter in one forward pass shares its gradient.
    pub fn param(&self, store: &ParamStore<T>, id: ParamId) -> Var<'_, T> {
        if let Some(&leaf) = self.param_leaves.borrow().get(&id) {
            return Var {
                tape: self,
                id: leaf,
            };
        }
        let v = self.push(Node {
            op: "param",
            value: store.value(id).clone(),
            parents: Vec::new(),
            requires_grad: true,
            backward: None,
        });
        self.param_leaves.borrow_mut().insert(id, v.id);
        v
    }

    /// Records the result of an operation. `backward` is dropped when no input
    /// tracks gradients.
    pub fn record<'t>(
        &'t self,
        op: &'static str,
        value: Tensor<T>,
        inputs: &[Var<'t, T>],
        backward: BackwardFn<T>,
    ) -> Result<Var<'t, T>> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op });
        }
        let requires_grad = {
            let nodes = self.nodes.borrow();
            inputs.iter().any(|v| nodes[v.id].requires_grad)
        };
        Ok(self.push(Node {
            op,
            value,
            parents: inputs.iter().map(|v| v.id).collect(),
            requires_grad,
            backward: requires_grad.then_some(backward),
        }))
    }

    /// True when any recorded node carries this op name.
    pub fn has_op(&self, op: &str) -> bool {
        self.nodes.borrow().iter().any(|n| n.op == op)
    }

    /// Reverse sweep from a scalar loss. Gradients add onto whatever earlier
    /// calls left behind.
    pub fn backward(&self, loss: Var<'_, T>) -> Result<()> {
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.numel() != 1 {
            return Err(Error::InvalidArgument(format!(
                "backward needs a scalar loss, got shape {:?}",
                root.value.shape()
            )));
        }
        if !root.value.is_finite() {
            return Err(Error::NonFinite { op: "backward" });
        }
        let mut adjoint: Vec<Option<Vec<T>>> = vec![None; loss.id + 1];
        adjoint[loss.id] = Some(vec![T::one()]);
        for id in (0..=loss.id).rev() {
            let Some(grad) = adjoint[id].take() else {
                continue;
            };
            let node = &nodes[id];
            if let Some(backward) = &node.backward {
                let ctx = BackwardCtx {
                    grad: &grad,
                    output: &node.value,
                    inputs: node.parents.iter().map(|&p| &nodes[p].value).collect(),
                };
                let parent_grads = backward(&ctx);
                debug_assert_eq!(parent_grads.len(), node.parents.len(), "op {}", node.op);
                for (&p, g) in node.parents.iter().zip(parent_grads) {
                    if !nodes[p].requires_grad {
                        continue;
                    }
                    debug_assert_eq!(g.len(), nodes[p].value.numel(), "op {}", node.op);
                    match &mut adjoint[p] {
                        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, &b)| *a += b),
                        slot => *slot = Some(g),
                    }
                }
            }
            adjoint[id] = Some(grad);
        }
        let mut grads = self.grads.borrow_mut();
        if grads.len() < nodes.len() {
            grads.resize(nodes.len(), None);
        }
        for (id, g) in adjoint.into_iter().enumerate() {
            let Some(g) = g else { continue };
            if !nodes[id].requires_grad {
                continue;
            }
            match &mut grads[id] {
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, &b)| *a += b),
                slot => *slot = Some(g),
            }
        }
        Ok(())
    }

    /// Accumulated gradient of a node, if any backward pass reached it.
    pub fn grad(&self, v: Var<'_, T>) -> Option<Tensor<T>> {
        let grads = self.grads.borrow();
        let g = grads.get(v.id)?.as_ref()?;
        let shape = self.nodes.borrow()[v.id].value.shape().to_vec();
        Some(Tensor::new(shape, g.clone()).expect("gradient matches value shape"))
    }

    /// Clears every accumulated gradient on the tape.
    pub fn zero_grad(&self) {
        self.grads.borrow_mut().iter_mut().for_each(|g| *g = None);
    }

    /// Adds parameter-leaf gradients into the store and clears them here, so a
    /// second flush does not double count.
    pub fn flush_param_grads(&self, store: &mut ParamStore<T>) {
        let mut grads = self.grads.borrow_mut();
        for (&pid, &leaf) in self.param_leaves.borrow().iter() {
            if let Some(g) = grads.get_mut(leaf).and_then(Option::take) {
                store.accumulate_grad(pid, &g);
            }
        }
    }

    fn value_of(&self, id: usize) -> std::cell::Ref<'_, Tensor<T>> {
        std::cell::Ref::map(self.nodes.borrow(), |n| &n[id].value)
    }
}

impl<'t, T: Scalar> Var<'t, T> {
    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> std::cell::Ref<'t, Tensor<T>> {
        self.tape.value_of(self.id)
    }

    pub fn to_tensor(&self) -> Tensor<T> {
        self.value().clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn numel(&self) -> usize {
        self.value().numel()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    /// Scalar value of a one-element tensor.
    pub fn item(&self) -> T {
        self.value().data()[0]
    }

    pub fn grad(&self) -> Option<Tensor<T>> {
        self.tape.grad(*self)
    }

    /// Same value, cut off from the gradient graph.
    pub fn detach(&self) -> Var<'t, T> {
        let value = self.to_tensor();
        self.tape.constant_named("detach", value)
    }
}
