//! Reverse-mode differentiation tape.
//!
//! Every differentiable operation appends one node holding its output value, the indices of its
//! inputs and a vector-Jacobian product rule. `backward` walks the nodes in exact reverse
//! execution order, so a tape is re-recorded for every forward pass.

use alloc::boxed::Box;
use alloc::vec::Vec;
use core::sync::atomic::{AtomicU32, Ordering};

use crate::error::{Error, Result};
use crate::param::{ParamId, ParamStore};
use crate::tensor::Tensor;

static NEXT_TAPE_ID: AtomicU32 = AtomicU32::new(1);

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u32,
    index: u32,
}

impl Var {
    pub fn index(self) -> usize {
        self.index as usize
    }
}

/// Arguments handed to a vector-Jacobian product rule.
pub struct VjpArgs<'a> {
    pub inputs: &'a [&'a Tensor],
    pub output: &'a Tensor,
    /// Gradient of the loss with respect to `output`.
    pub grad: &'a Tensor,
    /// `needs[i]` is false when input `i` cannot reach a gradient sink; rules may skip it.
    pub needs: &'a [bool],
}

/// Returns one gradient per input (same shape as the input), `None` when not needed.
pub type VjpFn = Box<dyn Fn(&VjpArgs<'_>) -> Vec<Option<Tensor>>>;

struct Node {
    op: &'static str,
    value: Tensor,
    inputs: Vec<u32>,
    vjp: Option<VjpFn>,
    requires_grad: bool,
}

pub struct Tape {
    id: u32,
    nodes: Vec<Node>,
    bindings: Vec<(u32, ParamId)>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self { id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed), nodes: Vec::new(), bindings: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push_node(&mut self, node: Node) -> Var {
        let index = self.nodes.len() as u32;
        self.nodes.push(node);
        Var { tape: self.id, index }
    }

    /// Records a value that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_node(Node { op: "constant", value, inputs: Vec::new(), vjp: None, requires_grad: false })
    }

    /// Records a free input whose gradient can be read back from [`Gradients`].
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push_node(Node { op: "leaf", value, inputs: Vec::new(), vjp: None, requires_grad: true })
    }

    /// Records the current value of a stored parameter; `backward` accumulates into its grad.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let v = self.leaf(store.get(id).value.clone());
        self.bindings.push((v.index, id));
        v
    }

    /// Records the output of an operation together with its backward rule.
    pub fn push(&mut self, op: &'static str, value: Tensor, inputs: &[Var], vjp: VjpFn) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.index()].requires_grad);
        let inputs = inputs.iter().map(|v| v.index).collect();
        self.push_node(Node { op, value, inputs, vjp: requires_grad.then_some(vjp), requires_grad })
    }

    pub fn value(&self, v: Var) -> &Tensor {
        debug_assert_eq!(v.tape, self.id, "variable from another tape");
        &self.nodes[v.index()].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.index()].requires_grad
    }

    pub fn op_name(&self, v: Var) -> &'static str {
        self.nodes[v.index()].op
    }

    pub fn check(&self, v: Var) -> Result<()> {
        if v.tape != self.id || v.index() >= self.nodes.len() {
            return Err(Error::ForeignVar);
        }
        Ok(())
    }

    /// Computes d loss / d node for every node recorded before `loss`.
    pub fn gradients(&self, loss: Var) -> Result<Gradients> {
        self.check(loss)?;
        let root = self.value(loss);
        if !root.is_scalar() {
            return Err(Error::NotScalar(root.shape().to_vec()));
        }
        let end = loss.index() + 1;
        let mut grads: Vec<Option<Tensor>> = (0..end).map(|_| None).collect();
        grads[loss.index()] = Some(Tensor::scalar(1.0));
        for i in (0..end).rev() {
            let node = &self.nodes[i];
            let Some(vjp) = node.vjp.as_ref() else { continue };
            let Some(grad) = grads[i].take() else { continue };
            let inputs: Vec<&Tensor> = node.inputs.iter().map(|&j| &self.nodes[j as usize].value).collect();
            let needs: Vec<bool> = node.inputs.iter().map(|&j| self.nodes[j as usize].requires_grad).collect();
            let parts = vjp(&VjpArgs { inputs: &inputs, output: &node.value, grad: &grad, needs: &needs });
            debug_assert_eq!(parts.len(), node.inputs.len(), "vjp arity for {}", node.op);
            for (&j, part) in node.inputs.iter().zip(parts) {
                let j = j as usize;
                if !self.nodes[j].requires_grad {
                    continue;
                }
                let Some(part) = part else { continue };
                debug_assert_eq!(part.shape(), self.nodes[j].value.shape(), "vjp shape for {}", node.op);
                match &mut grads[j] {
                    Some(acc) => acc.add_assign(&part),
                    slot @ None => *slot = Some(part),
                }
            }
            // keep gradients of leaves for readback
            if node.inputs.is_empty() {
                grads[i] = Some(grad);
            }
        }
        Ok(Gradients { tape: self.id, grads })
    }

    /// Back-propagates `loss` and adds the result into every bound parameter's grad.
    pub fn backward(&self, loss: Var, store: &mut ParamStore) -> Result<()> {
        let grads = self.gradients(loss)?;
        for &(node, id) in &self.bindings {
            if let Some(Some(g)) = grads.grads.get(node as usize) {
                store.get_mut(id).grad.add_assign(g);
            }
        }
        Ok(())
    }

    /// Parameters bound on this tape, in binding order.
    pub fn bound_params(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.bindings.iter().map(|&(_, id)| id)
    }
}

/// Result of a backward pass.
pub struct Gradients {
    tape: u32,
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`; zero-filled when `v` does not influence it.
    pub fn get(&self, tape: &Tape, v: Var) -> Tensor {
        debug_assert_eq!(self.tape, v.tape);
        match self.grads.get(v.index()) {
            Some(Some(g)) => g.clone(),
            _ => Tensor::zeros(tape.value(v).shape().to_vec()),
        }
    }

    pub fn contains(&self, v: Var) -> bool {
        matches!(self.grads.get(v.index()), Some(Some(_)))
    }
}
