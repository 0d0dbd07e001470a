//! Reverse-mode automatic differentiation over a flat tape.
//!
//! Nodes are appended in execution order, so parent ids always precede a
//! node's own id and the tape is already a topological order of the DAG.
//! `backward` walks it once in reverse, accumulating gradients by summation
//! over fan-out. A tape is confined to one thread; distinct tapes may run
//! concurrently.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{CoreError, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(pub usize);

/// Everything a backward rule may look at: the upstream gradient, the node's
/// own forward value, and its parents' forward values.
pub struct BackCtx<'a, T: Scalar> {
    pub grad: &'a Tensor<T>,
    pub value: &'a Tensor<T>,
    pub parents: &'a [&'a Tensor<T>],
}

type BackFn<T> = Box<dyn Fn(&BackCtx<'_, T>) -> Vec<Tensor<T>>>;

struct Node<T: Scalar> {
    op: &'static str,
    parents: Vec<NodeId>,
    value: Tensor<T>,
    backward: Option<BackFn<T>>,
}

pub struct Tape<T: Scalar> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Register an input node. Gradients accumulate on leaves but do not
    /// propagate further.
    pub fn leaf(&mut self, value: Tensor<T>) -> NodeId {
        self.push("leaf", vec![], value, None)
    }

    /// Register an operation result together with its backward rule.
    pub fn push(
        &mut self,
        op: &'static str,
        parents: Vec<NodeId>,
        value: Tensor<T>,
        backward: Option<BackFn<T>>,
    ) -> NodeId {
        debug_assert!(value.all_finite(), "non-finite output of op `{op}`");
        debug_assert!(parents.iter().all(|p| p.0 < self.nodes.len()));
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            op,
            parents,
            value,
            backward,
        });
        id
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    pub fn op_name(&self, id: NodeId) -> &'static str {
        self.nodes[id.0].op
    }

    /// Reverse pass from a scalar loss. Returns one gradient slot per node
    /// id; slots stay `None` for nodes the loss does not depend on.
    pub fn backward(&self, loss: NodeId) -> Result<Vec<Option<Tensor<T>>>> {
        let loss_value = &self.nodes[loss.0].value;
        if !loss_value.is_scalar() {
            return Err(CoreError::NonScalarLoss {
                elements: loss_value.len(),
            });
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::full(loss_value.shape(), T::one()));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            let Some(back) = node.backward.as_ref() else {
                continue;
            };
            // Take the grad out so we can mutate parent slots below.
            let Some(grad) = grads[i].take() else {
                continue;
            };
            let parent_values: Vec<&Tensor<T>> =
                node.parents.iter().map(|p| &self.nodes[p.0].value).collect();
            let ctx = BackCtx {
                grad: &grad,
                value: &node.value,
                parents: &parent_values,
            };
            let parent_grads = back(&ctx);
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for (p, g) in node.parents.iter().zip(parent_grads) {
                debug_assert_eq!(g.shape(), self.nodes[p.0].value.shape());
                match &mut grads[p.0] {
                    Some(acc) => acc.add_assign(&g)?,
                    slot @ None => *slot = Some(g),
                }
            }
            grads[i] = Some(grad);
        }
        Ok(grads)
    }

    /// Gradient of the loss with respect to a single node, zeros if detached.
    pub fn grad_of(&self, grads: &[Option<Tensor<T>>], id: NodeId) -> Tensor<T> {
        grads[id.0]
            .clone()
            .unwrap_or_else(|| Tensor::zeros(self.nodes[id.0].value.shape()))
    }
}
