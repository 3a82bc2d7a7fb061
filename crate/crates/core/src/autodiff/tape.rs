//! Tape-based reverse-mode automatic differentiation over dense tensors.
//!
//! Every operation appends a node holding its value and a closure that maps
//! the output adjoint to input adjoints. [`Tape::backward`] replays the
//! nodes in reverse order. Nodes whose inputs do not require gradients keep
//! no closure, so evaluation with constant parameters records values only.

use std::cell::RefCell;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Maps the output adjoint to one optional adjoint per parent. The flag
/// slice says which parents need a gradient.
pub(crate) type BackwardFn<F> = Box<dyn Fn(&Tensor<F>, &[bool]) -> Vec<Option<Tensor<F>>>>;

struct Node<F: Real> {
    value: Arc<Tensor<F>>,
    parents: Vec<usize>,
    backward: Option<BackwardFn<F>>,
    requires_grad: bool,
}

/// Single-threaded recording of a computation.
pub struct Tape<F: Real> {
    nodes: RefCell<Vec<Node<F>>>,
}

impl<F: Real> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t, F: Real> {
    pub(crate) tape: &'t Tape<F>,
    pub(crate) id: usize,
}

impl<F: Real> std::fmt::Debug for Var<'_, F> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var(#{} {:?})", self.id, self.value().shape())
    }
}

impl<F: Real> Tape<F> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Bytes held by recorded node values; a lower bound on peak memory.
    pub fn value_bytes(&self) -> usize {
        self.nodes
            .borrow()
            .iter()
            .map(|n| n.value.numel() * std::mem::size_of::<F>())
            .sum()
    }

    fn push_leaf(&self, value: Arc<Tensor<F>>, requires_grad: bool) -> Var<'_, F> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            parents: Vec::new(),
            backward: None,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// A differentiable leaf.
    pub fn var(&self, value: Tensor<F>) -> Var<'_, F> {
        self.push_leaf(Arc::new(value), true)
    }

    /// A differentiable leaf sharing storage with the caller.
    pub fn var_shared(&self, value: Arc<Tensor<F>>) -> Var<'_, F> {
        self.push_leaf(value, true)
    }

    /// A non-differentiable leaf.
    pub fn constant(&self, value: Tensor<F>) -> Var<'_, F> {
        self.push_leaf(Arc::new(value), false)
    }

    pub fn constant_shared(&self, value: Arc<Tensor<F>>) -> Var<'_, F> {
        self.push_leaf(value, false)
    }

    pub fn scalar(&self, value: F) -> Var<'_, F> {
        self.constant(Tensor::scalar(value))
    }

    /// Records an operation result.
    pub(crate) fn push_op(
        &self,
        value: Tensor<F>,
        parents: &[Var<'_, F>],
        backward: BackwardFn<F>,
    ) -> Var<'_, F> {
        let mut nodes = self.nodes.borrow_mut();
        let ids: Vec<usize> = parents.iter().map(|p| p.id).collect();
        let requires_grad = ids.iter().any(|&i| nodes[i].requires_grad);
        nodes.push(Node {
            value: Arc::new(value),
            parents: ids,
            backward: requires_grad.then_some(backward),
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    pub(crate) fn value_of(&self, id: usize) -> Arc<Tensor<F>> {
        Arc::clone(&self.nodes.borrow()[id].value)
    }

    pub(crate) fn requires_grad(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    /// Propagates adjoints from a one-element `loss`.
    pub fn backward(&self, loss: Var<'_, F>) -> Result<Gradients<F>> {
        let nodes = self.nodes.borrow();
        if nodes[loss.id].value.numel() != 1 {
            return Err(Error::InvalidShape {
                shape: nodes[loss.id].value.shape().to_vec(),
                reason: "backward() needs a scalar loss".into(),
            });
        }
        let mut grads: Vec<Option<Tensor<F>>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.id] = Some(Tensor::full(nodes[loss.id].value.shape().to_vec(), F::one()));
        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            let Some(backward) = node.backward.as_ref() else {
                continue;
            };
            let Some(g) = grads[id].take() else {
                continue;
            };
            let needs: Vec<bool> = node.parents.iter().map(|&p| nodes[p].requires_grad).collect();
            let parent_grads = backward(&g, &needs);
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for ((&p, pg), &need) in node.parents.iter().zip(parent_grads).zip(&needs) {
                let Some(pg) = pg else { continue };
                if !need {
                    continue;
                }
                debug_assert_eq!(pg.shape(), nodes[p].value.shape(), "adjoint shape");
                match &mut grads[p] {
                    Some(acc) => acc.add_assign(&pg),
                    slot @ None => *slot = Some(pg),
                }
            }
        }
        Ok(Gradients { grads })
    }
}

/// Adjoints of the leaves after [`Tape::backward`].
pub struct Gradients<F: Real> {
    grads: Vec<Option<Tensor<F>>>,
}

impl<F: Real> Gradients<F> {
    /// Adjoint of `var`, or `None` if the loss does not depend on it.
    pub fn get(&self, var: Var<'_, F>) -> Option<&Tensor<F>> {
        self.grads.get(var.id).and_then(|g| g.as_ref())
    }

    /// Adjoint of `var`, with zeros where the loss does not depend on it.
    pub fn get_or_zeros(&self, var: Var<'_, F>) -> Tensor<F> {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(var.value().shape().to_vec()))
    }
}

impl<'t, F: Real> Var<'t, F> {
    pub fn value(&self) -> Arc<Tensor<F>> {
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn tape(&self) -> &'t Tape<F> {
        self.tape
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.requires_grad(self.id)
    }

    /// The value of a one-element variable.
    pub fn item(&self) -> Result<F> {
        self.value().item()
    }
}
