//! Minimal reverse-mode automatic differentiation.
//!
//! A [`Tensor`] is an immutable, shaped buffer of `f64`. Tensors produced by an
//! operation on at least one gradient-tracking input remember that operation,
//! which forms a dynamic graph (a tape) rooted at the parameters. Calling
//! [`Tensor::backward`] on a scalar walks that graph once in reverse creation
//! order and accumulates gradients into every tracking tensor.

mod grad_check;
mod kernels;
mod ops;
mod params;

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use crate::error::{Error, Result};

pub use grad_check::{grad_check, GradCheckEntry, GradCheckReport};
pub use ops::{BinaryOp, UnaryOp};
pub use params::ParameterSet;

pub(crate) use ops::Op;

static NEXT_ID: AtomicUsize = AtomicUsize::new(0);
thread_local! {
    static TANH_FAULT: std::cell::Cell<bool> = const { std::cell::Cell::new(false) };
}

/// Flips the sign of the registered tanh derivative. Only for mutation-testing
/// the gradient checker; never enable outside that. Affects the calling
/// thread only.
#[doc(hidden)]
pub fn set_tanh_derivative_fault(enabled: bool) {
    TANH_FAULT.with(|f| f.set(enabled));
}

pub(crate) fn tanh_fault() -> bool {
    TANH_FAULT.with(|f| f.get())
}

#[derive(Clone)]
pub struct Tensor(Arc<Node>);

struct Node {
    id: usize,
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    grad: Mutex<Option<Vec<f64>>>,
    op: Op,
}

impl Tensor {
    fn make(shape: Vec<usize>, data: Vec<f64>, requires_grad: bool, op: Op) -> Tensor {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor(Arc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape,
            data,
            requires_grad,
            grad: Mutex::new(None),
            op,
        }))
    }

    fn check_shape(shape: &[usize], len: usize) -> Result<()> {
        if shape.is_empty() {
            return Err(Error::Dimension(format!("invalid shape {shape:?}")));
        }
        let n: usize = shape.iter().product();
        if n != len {
            return Err(Error::Dimension(format!(
                "shape {shape:?} holds {n} elements but {len} were given"
            )));
        }
        Ok(())
    }

    /// Constant tensor (does not track gradients).
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        Self::check_shape(shape, data.len())?;
        Ok(Self::make(shape.to_vec(), data, false, Op::Leaf))
    }

    /// Gradient-tracking leaf, i.e. a trainable parameter.
    pub fn param(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        Self::check_shape(shape, data.len())?;
        Ok(Self::make(shape.to_vec(), data, true, Op::Leaf))
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Self::make(shape.to_vec(), vec![0.0; n], false, Op::Leaf)
    }

    pub fn scalar(value: f64) -> Tensor {
        Self::make(vec![1], vec![value], false, Op::Leaf)
    }

    /// Result of an operation; records `op` only if some input tracks gradients.
    pub(crate) fn from_op(shape: Vec<usize>, data: Vec<f64>, op: Op) -> Tensor {
        let requires_grad = op.inputs().iter().any(|t| t.requires_grad());
        let op = if requires_grad { op } else { Op::Leaf };
        Self::make(shape, data, requires_grad, op)
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.0.data
    }

    pub fn numel(&self) -> usize {
        self.0.data.len()
    }

    pub fn rank(&self) -> usize {
        self.0.shape.len()
    }

    /// Size of the last axis.
    pub fn last_dim(&self) -> usize {
        *self.0.shape.last().expect("tensor shapes are never empty")
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub(crate) fn id(&self) -> usize {
        self.0.id
    }

    pub(crate) fn op(&self) -> &Op {
        &self.0.op
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.numel() != 1 {
            return Err(Error::Contract(format!(
                "item() on tensor of shape {:?}",
                self.shape()
            )));
        }
        Ok(self.0.data[0])
    }

    /// Accumulated gradient, present iff the tensor tracks gradients and a
    /// backward pass has reached it.
    pub fn grad(&self) -> Option<Vec<f64>> {
        self.0.grad.lock().expect("grad lock").clone()
    }

    pub fn zero_grad(&self) {
        if self.requires_grad() {
            *self.0.grad.lock().expect("grad lock") = None;
        }
    }

    /// Same values, cut off from the graph.
    pub fn detach(&self) -> Tensor {
        Self::make(self.0.shape.clone(), self.0.data.clone(), false, Op::Leaf)
    }

    fn accumulate_grad(&self, g: &[f64]) {
        let mut slot = self.0.grad.lock().expect("grad lock");
        match slot.as_mut() {
            Some(buf) => buf.iter_mut().zip(g).for_each(|(b, v)| *b += v),
            None => *slot = Some(g.to_vec()),
        }
    }

    /// Reverse-mode sweep from a scalar loss. Gradients add onto whatever the
    /// tracking tensors already hold, so repeated calls accumulate.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape()
            )));
        }
        if !self.requires_grad() {
            return Err(Error::Contract(
                "loss does not depend on any gradient-tracking tensor".into(),
            ));
        }

        // Inputs are always created before their consumers, so descending id
        // order is a reverse topological order.
        let mut seen = HashSet::new();
        let mut order = Vec::new();
        let mut stack = vec![self.clone()];
        seen.insert(self.id());
        while let Some(t) = stack.pop() {
            for parent in t.op().inputs() {
                if parent.requires_grad() && seen.insert(parent.id()) {
                    stack.push(parent.clone());
                }
            }
            order.push(t);
        }
        order.sort_unstable_by_key(|t| std::cmp::Reverse(t.id()));

        let mut acc = GradAccumulator::default();
        acc.grads.insert(self.id(), vec![1.0]);
        for node in &order {
            let g = acc
                .grads
                .remove(&node.id())
                .unwrap_or_else(|| vec![0.0; node.numel()]);
            node.op().backward(node, &g, &mut acc);
            node.accumulate_grad(&g);
        }
        Ok(())
    }
}

impl Drop for Node {
    // Unrolled recurrences build graphs thousands of nodes deep; dropping them
    // recursively would exhaust the stack.
    fn drop(&mut self) {
        let mut pending = std::mem::replace(&mut self.op, Op::Leaf).into_inputs();
        while let Some(t) = pending.pop() {
            if let Ok(mut node) = Arc::try_unwrap(t.0) {
                pending.extend(std::mem::replace(&mut node.op, Op::Leaf).into_inputs());
            }
        }
    }
}

/// Per-sweep gradient buffers keyed by tensor id.
#[derive(Default)]
pub(crate) struct GradAccumulator {
    grads: HashMap<usize, Vec<f64>>,
}

impl GradAccumulator {
    /// Zero-initialised gradient buffer for `t`, or `None` if `t` is constant.
    pub(crate) fn slot(&mut self, t: &Tensor) -> Option<&mut Vec<f64>> {
        if !t.requires_grad() {
            return None;
        }
        Some(
            self.grads
                .entry(t.id())
                .or_insert_with(|| vec![0.0; t.numel()]),
        )
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let preview: Vec<f64> = self.data().iter().take(8).copied().collect();
        f.debug_struct("Tensor")
            .field("shape", &self.shape())
            .field("requires_grad", &self.requires_grad())
            .field("data", &preview)
            .finish()
    }
}

#[cfg(test)]
mod tests;
