//! Reverse-mode automatic differentiation.
//!
//! A [`Tape`] records one node per operation whose inputs require gradients.
//! Node ids are assigned in recording order, so every node's inputs precede it
//! and a reverse sweep over ids is a valid topological order. Operations on
//! untracked inputs produce constants and record nothing, which makes a tape
//! without leaves a plain inference context.

use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

use crate::error::{Result, TensorError};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub(crate) type BackwardFn<T> = Box<dyn FnOnce(&Tensor<T>, &[bool]) -> Result<Vec<Option<Tensor<T>>>>>;

struct Node<T> {
    inputs: Vec<Option<usize>>,
    backward: Option<BackwardFn<T>>,
    is_leaf: bool,
}

/// Single-owner record of differentiable operations.
pub struct Tape<T: Scalar> {
    nodes: RefCell<Vec<Node<T>>>,
    spent: RefCell<bool>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// A tensor value bound to a tape. Cloning is cheap (shared value).
#[derive(Clone)]
pub struct Var<'t, T: Scalar> {
    tape: &'t Tape<T>,
    value: Rc<Tensor<T>>,
    id: Option<usize>,
}

impl<T: Scalar> std::fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var").field("id", &self.id).field("value", &self.value).finish()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: RefCell::new(Vec::new()), spent: RefCell::new(false) }
    }

    /// Number of recorded nodes (leaves included).
    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A leaf that requires gradients.
    pub fn leaf(&self, value: Tensor<T>) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { inputs: Vec::new(), backward: None, is_leaf: true });
        Var { tape: self, value: Rc::new(value), id: Some(nodes.len() - 1) }
    }

    /// A value that never receives gradients.
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        Var { tape: self, value: Rc::new(value), id: None }
    }

    pub(crate) fn record<'t, F>(
        &'t self,
        op: &'static str,
        value: Tensor<T>,
        inputs: &[&Var<'t, T>],
        backward: F,
    ) -> Result<Var<'t, T>>
    where
        F: FnOnce(&Tensor<T>, &[bool]) -> Result<Vec<Option<Tensor<T>>>> + 'static,
    {
        if !value.is_finite() {
            return Err(TensorError::NonFinite(op.to_string()));
        }
        debug_assert!(inputs.iter().all(|v| std::ptr::eq(v.tape, self)), "mixed tapes in {op}");
        if inputs.iter().all(|v| v.id.is_none()) {
            return Ok(Var { tape: self, value: Rc::new(value), id: None });
        }
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            inputs: inputs.iter().map(|v| v.id).collect(),
            backward: Some(Box::new(backward)),
            is_leaf: false,
        });
        Ok(Var { tape: self, value: Rc::new(value), id: Some(nodes.len() - 1) })
    }

    /// Propagates d(loss)/d(node) back to every leaf the loss depends on.
    /// Fan-out gradients are summed. A tape supports a single backward pass.
    pub fn backward(&self, loss: &Var<'_, T>) -> Result<Gradients<T>> {
        if loss.value.numel() != 1 {
            return Err(TensorError::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                loss.value.shape()
            )));
        }
        let root = loss
            .id
            .ok_or_else(|| TensorError::Usage("loss does not depend on any leaf".into()))?;
        if std::mem::replace(&mut *self.spent.borrow_mut(), true) {
            return Err(TensorError::Usage("backward already ran on this tape".into()));
        }
        let mut nodes = self.nodes.borrow_mut();
        let mut grads: Vec<Option<Tensor<T>>> = (0..=root).map(|_| None).collect();
        grads[root] = Some(Tensor::ones(loss.value.shape().to_vec()));
        let mut leaves = HashMap::new();
        for i in (0..=root).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &mut nodes[i];
            if node.is_leaf {
                leaves.insert(i, g);
                continue;
            }
            let Some(f) = node.backward.take() else { continue };
            let need: Vec<bool> = node.inputs.iter().map(Option::is_some).collect();
            let input_grads = f(&g, &need)?;
            for (input, ig) in node.inputs.iter().zip(input_grads) {
                if let (Some(j), Some(ig)) = (input, ig) {
                    match &mut grads[*j] {
                        Some(acc) => acc.add_assign(&ig),
                        slot => *slot = Some(ig),
                    }
                }
            }
        }
        Ok(Gradients { by_leaf: leaves })
    }
}

/// Gradients of a scalar loss w.r.t. tape leaves.
#[derive(Debug, Default)]
pub struct Gradients<T> {
    by_leaf: HashMap<usize, Tensor<T>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient for `leaf`; `None` when the loss does not depend on it.
    pub fn get(&self, leaf: &Var<'_, T>) -> Option<&Tensor<T>> {
        leaf.id.and_then(|id| self.by_leaf.get(&id))
    }

    pub fn take(&mut self, leaf: &Var<'_, T>) -> Option<Tensor<T>> {
        leaf.id.and_then(|id| self.by_leaf.remove(&id))
    }

    /// Gradient for `leaf`, or zeros when the loss does not reach it.
    pub fn get_or_zeros(&self, leaf: &Var<'_, T>) -> Tensor<T> {
        self.get(leaf).cloned().unwrap_or_else(|| Tensor::zeros(leaf.shape().to_vec()))
    }
}

impl<'t, T: Scalar> Var<'t, T> {
    pub fn value(&self) -> &Tensor<T> {
        &self.value
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn requires_grad(&self) -> bool {
        self.id.is_some()
    }

    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    /// Detached copy of the value.
    pub fn to_tensor(&self) -> Tensor<T> {
        (*self.value).clone()
    }

    pub(crate) fn shared(&self) -> Rc<Tensor<T>> {
        Rc::clone(&self.value)
    }
}
