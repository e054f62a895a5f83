//! Tape-based reverse-mode differentiation in `f64`.
//!
//! A [`Graph`] records every operation applied to its [`Var`]s. Calling
//! [`Graph::backward`] walks the tape in reverse insertion order, which
//! fixes the gradient accumulation order and keeps training bitwise
//! reproducible.

pub mod conv;
pub mod ops;

use std::cell::{Ref, RefCell};

use crate::tensor::Tensor;

pub use conv::ConvSpec;
pub(crate) use ops::softmax_strided;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

pub(crate) struct BackwardArgs<'a> {
    pub grad: &'a Tensor,
    pub inputs: Vec<&'a Tensor>,
    pub output: &'a Tensor,
    pub needs: Vec<bool>,
}

pub(crate) type BackwardFn = Box<dyn Fn(&BackwardArgs) -> Vec<Option<Tensor>>>;

struct Node {
    value: Tensor,
    parents: Vec<usize>,
    backward: Option<BackwardFn>,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: RefCell<Vec<Node>>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Leaf that receives a gradient.
    pub fn param(&self, value: Tensor) -> Var {
        self.push_leaf(value, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&self, value: Tensor) -> Var {
        self.push_leaf(value, false)
    }

    fn push_leaf(&self, value: Tensor, needs_grad: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            parents: Vec::new(),
            backward: None,
            needs_grad,
        });
        Var(nodes.len() - 1)
    }

    pub(crate) fn push_op(&self, value: Tensor, parents: &[Var], backward: BackwardFn) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        let needs_grad = parents.iter().any(|p| nodes[p.0].needs_grad);
        nodes.push(Node {
            value,
            parents: parents.iter().map(|p| p.0).collect(),
            backward: needs_grad.then_some(backward),
            needs_grad,
        });
        Var(nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> Ref<'_, Tensor> {
        Ref::map(self.nodes.borrow(), |n| &n[v.0].value)
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.value(v).shape().to_vec()
    }

    pub fn item(&self, v: Var) -> f64 {
        self.value(v).item()
    }

    pub fn needs_grad(&self, v: Var) -> bool {
        self.nodes.borrow()[v.0].needs_grad
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    /// Gradients of the scalar `root` with respect to every node that needs one.
    pub fn backward(&self, root: Var) -> Gradients {
        let nodes = self.nodes.borrow();
        let mut grads: Vec<Option<Tensor>> = (0..nodes.len()).map(|_| None).collect();
        assert_eq!(nodes[root.0].value.len(), 1, "backward needs a scalar root");
        grads[root.0] = Some(Tensor::full(nodes[root.0].value.shape(), 1.0));
        for i in (0..=root.0).rev() {
            let node = &nodes[i];
            let Some(backward) = node.backward.as_ref() else {
                continue;
            };
            let Some(grad) = grads[i].take() else {
                continue;
            };
            let args = BackwardArgs {
                grad: &grad,
                inputs: node.parents.iter().map(|&p| &nodes[p].value).collect(),
                output: &node.value,
                needs: node.parents.iter().map(|&p| nodes[p].needs_grad).collect(),
            };
            let parent_grads = backward(&args);
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for (&p, g) in node.parents.iter().zip(parent_grads) {
                let Some(g) = g else { continue };
                if !nodes[p].needs_grad {
                    continue;
                }
                match &mut grads[p] {
                    Some(acc) => acc.add_assign(&g),
                    slot @ None => *slot = Some(g),
                }
            }
        }
        Gradients { grads }
    }
}

pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}
