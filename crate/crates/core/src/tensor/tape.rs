//! Dynamic reverse-mode tape.
//!
//! A [`Tape`] records every operation of one forward pass. Node ids are
//! assigned in execution order, so walking ids downward from the loss is a
//! valid reverse topological order. Tapes are meant to be thrown away after
//! each training step.

use super::Tensor;
use crate::error::{Error, Result};
use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;

/// Maps the output gradient to one optional gradient per parent.
/// `needs[i]` is false when parent `i` does not require a gradient, in which
/// case the closure may return `None` for it.
pub type BackwardFn = Box<dyn Fn(&Tensor, &[bool]) -> Vec<Option<Tensor>>>;

struct Node {
    value: Rc<Tensor>,
    requires_grad: bool,
    is_leaf: bool,
    parents: Vec<usize>,
    backward: Option<BackwardFn>,
}

#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    grads: RefCell<Vec<Option<Tensor>>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, node: Node) -> usize {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(node);
        self.grads.borrow_mut().push(None);
        nodes.len() - 1
    }

    /// Leaf that receives a gradient on [`Tape::backward`].
    pub fn var(&self, value: Tensor) -> Var<'_> {
        let id = self.push(Node {
            value: Rc::new(value),
            requires_grad: true,
            is_leaf: true,
            parents: Vec::new(),
            backward: None,
        });
        Var { tape: self, id }
    }

    /// Leaf that is treated as a constant.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        let id = self.push(Node {
            value: Rc::new(value),
            requires_grad: false,
            is_leaf: true,
            parents: Vec::new(),
            backward: None,
        });
        Var { tape: self, id }
    }

    /// Records a derived value. The backward closure is dropped when no
    /// parent requires a gradient.
    pub fn record<F>(&self, value: Tensor, parents: &[Var<'_>], backward: F) -> Var<'_>
    where
        F: Fn(&Tensor, &[bool]) -> Vec<Option<Tensor>> + 'static,
    {
        let requires_grad = {
            let nodes = self.nodes.borrow();
            parents.iter().any(|p| nodes[p.id].requires_grad)
        };
        let id = self.push(Node {
            value: Rc::new(value),
            requires_grad,
            is_leaf: false,
            parents: parents.iter().map(|p| p.id).collect(),
            backward: if requires_grad {
                Some(Box::new(backward))
            } else {
                None
            },
        });
        Var { tape: self, id }
    }

    /// Propagates from a scalar loss. Leaf gradients accumulate across calls
    /// until [`Tape::zero_grad`].
    pub fn backward(&self, loss: Var<'_>) -> Result<()> {
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if !root.value.is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                root.value.shape()
            )));
        }
        let mut work: Vec<Option<Tensor>> = (0..=loss.id).map(|_| None).collect();
        work[loss.id] = Some(Tensor::ones(root.value.shape()));
        let mut grads = self.grads.borrow_mut();
        for id in (0..=loss.id).rev() {
            let Some(g) = work[id].take() else { continue };
            let node = &nodes[id];
            if node.is_leaf {
                if node.requires_grad {
                    accumulate(&mut grads[id], g);
                }
                continue;
            }
            let Some(backward) = &node.backward else { continue };
            let needs: Vec<bool> = node.parents.iter().map(|&p| nodes[p].requires_grad).collect();
            let parent_grads = backward(&g, &needs);
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for ((&p, pg), need) in node.parents.iter().zip(parent_grads).zip(needs) {
                if let (true, Some(pg)) = (need, pg) {
                    debug_assert_eq!(pg.shape(), nodes[p].value.shape());
                    accumulate(&mut work[p], pg);
                }
            }
        }
        Ok(())
    }

    /// Gradient of a leaf created with [`Tape::var`], if any reached it.
    pub fn grad(&self, var: Var<'_>) -> Option<Tensor> {
        self.grads.borrow()[var.id].clone()
    }

    pub fn zero_grad(&self) {
        self.grads.borrow_mut().iter_mut().for_each(|g| *g = None);
    }
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) {
    match slot {
        Some(acc) => acc
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .for_each(|(a, b)| *a += b),
        None => *slot = Some(g),
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Rc<Tensor> {
        Rc::clone(&self.tape.nodes.borrow()[self.id].value)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    pub fn grad(&self) -> Option<Tensor> {
        self.tape.grad(*self)
    }

    pub fn backward(&self) -> Result<()> {
        self.tape.backward(*self)
    }
}
