use std::cell::{Cell, RefCell};
use std::rc::Rc;

use super::{Tensor, TensorError};

/// Vector-Jacobian product of one recorded op.
///
/// Receives the gradient of the op's output and a flag per parent telling
/// whether that parent wants a gradient. Returns one entry per parent.
pub type BackwardFn = Box<dyn Fn(&[f64], &[bool]) -> Vec<Option<Vec<f64>>>>;

struct Node {
    value: Rc<Tensor>,
    parents: Vec<usize>,
    backward: Option<BackwardFn>,
    requires_grad: bool,
}

/// Dynamic tape recorded during a forward pass.
///
/// Nodes are appended in execution order, so the id order is a topological
/// order and the reverse sweep visits each node once. A graph is consumed by
/// [`Graph::backward`]; build a fresh one for the next forward pass.
pub struct Graph {
    nodes: RefCell<Vec<Node>>,
    grads: RefCell<Vec<Option<Vec<f64>>>>,
    consumed: Cell<bool>,
}

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy)]
pub struct Var<'g> {
    graph: &'g Graph,
    id: usize,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            grads: RefCell::new(Vec::new()),
            consumed: Cell::new(false),
        }
    }

    /// Leaf that receives a gradient.
    pub fn param(&self, value: Tensor) -> Var<'_> {
        self.push(Rc::new(value), Vec::new(), None, true)
    }

    /// Leaf that does not receive a gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(Rc::new(value), Vec::new(), None, false)
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Records the result of an op. `make_backward` is only invoked when at
    /// least one parent requires a gradient, so inference graphs keep no
    /// saved activations.
    pub fn record<'g>(
        &'g self,
        value: Tensor,
        parents: &[Var<'g>],
        make_backward: impl FnOnce() -> BackwardFn,
    ) -> Var<'g> {
        debug_assert!(parents.iter().all(|p| std::ptr::eq(p.graph, self)));
        let requires_grad = {
            let nodes = self.nodes.borrow();
            parents.iter().any(|p| nodes[p.id].requires_grad)
        };
        let backward = requires_grad.then(make_backward);
        self.push(
            Rc::new(value),
            parents.iter().map(|p| p.id).collect(),
            backward,
            requires_grad,
        )
    }

    fn push(
        &self,
        value: Rc<Tensor>,
        parents: Vec<usize>,
        backward: Option<BackwardFn>,
        requires_grad: bool,
    ) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            parents,
            backward,
            requires_grad,
        });
        Var {
            graph: self,
            id: nodes.len() - 1,
        }
    }

    /// Reverse sweep from a single-element loss. Populates gradients of every
    /// leaf created with [`Graph::param`].
    pub fn backward(&self, loss: Var<'_>) -> Result<(), TensorError> {
        if self.consumed.get() {
            return Err(TensorError::GraphConsumed);
        }
        let mut nodes = self.nodes.borrow_mut();
        let numel = nodes[loss.id].value.numel();
        if numel != 1 {
            return Err(TensorError::NonScalarLoss { numel });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
        grads[loss.id] = Some(vec![1.0]);
        for id in (0..=loss.id).rev() {
            let Some(backward) = nodes[id].backward.take() else {
                continue;
            };
            let Some(grad_out) = grads[id].take() else {
                continue;
            };
            let parents = nodes[id].parents.clone();
            let needs: Vec<bool> = parents.iter().map(|&p| nodes[p].requires_grad).collect();
            let parent_grads = backward(&grad_out, &needs);
            debug_assert_eq!(parent_grads.len(), parents.len());
            for ((&p, g), need) in parents.iter().zip(parent_grads).zip(&needs) {
                let (Some(g), true) = (g, need) else { continue };
                debug_assert_eq!(g.len(), nodes[p].value.numel());
                match &mut grads[p] {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    slot @ None => *slot = Some(g),
                }
            }
        }
        // Saved activations live in the closures; release them all.
        for node in nodes.iter_mut() {
            node.backward = None;
        }
        self.consumed.set(true);
        *self.grads.borrow_mut() = grads;
        Ok(())
    }

    /// Gradient of a leaf after [`Graph::backward`]. Leaves the loss does not
    /// depend on get a zero gradient.
    pub fn grad(&self, var: Var<'_>) -> Option<Tensor> {
        let nodes = self.nodes.borrow();
        let node = &nodes[var.id];
        if !node.requires_grad || !self.consumed.get() {
            return None;
        }
        let shape = node.value.shape().to_vec();
        let data = self.grads.borrow()[var.id]
            .clone()
            .unwrap_or_else(|| vec![0.0; node.value.numel()]);
        Tensor::new(shape, data).ok()
    }
}

impl<'g> Var<'g> {
    pub fn graph(&self) -> &'g Graph {
        self.graph
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Rc<Tensor> {
        Rc::clone(&self.graph.nodes.borrow()[self.id].value)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.graph.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.graph.nodes.borrow()[self.id].requires_grad
    }

    /// Single value of a one-element tensor.
    pub fn item(&self) -> f64 {
        self.value().data()[0]
    }
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{} {:?}", self.id, self.shape())
    }
}
