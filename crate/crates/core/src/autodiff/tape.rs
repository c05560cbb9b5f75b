use std::collections::hash_map::DefaultHasher;
use std::hash::Hasher;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Values handed to an operator's gradient rule.
pub struct BackwardCtx<'a, T> {
    pub inputs: Vec<&'a Tensor<T>>,
    pub output: &'a Tensor<T>,
    pub grad: &'a Tensor<T>,
    /// Which inputs need a gradient; rules may return `None` for the others.
    pub needs: Vec<bool>,
}

/// Gradient rule of a recorded operator.
pub trait Backward<T: Real> {
    fn name(&self) -> &'static str;

    /// One entry per input, each shaped like that input.
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Result<Vec<Option<Tensor<T>>>>;

    /// Feed the operator's discrete decisions (ReLU activity, arg-max
    /// winners, ...) to `hasher`. Used by the gradient checker to detect a
    /// finite-difference step that crosses a kink.
    fn decisions(&self, _inputs: &[&Tensor<T>], _output: &Tensor<T>, _hasher: &mut DefaultHasher) {}
}

struct Node<T: Real> {
    value: Tensor<T>,
    inputs: Vec<Var>,
    op: Option<Box<dyn Backward<T>>>,
    requires_grad: bool,
}

/// Append-only record of a forward computation.
pub struct Tape<T: Real> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drop every node so the tape can record a new computation.
    pub fn reset(&mut self) {
        self.nodes.clear();
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    /// Leaf that never receives a gradient (data, labels).
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            inputs: Vec::new(),
            op: None,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Record an operator output. Fails if the value is not finite, naming
    /// the operator.
    pub fn push(
        &mut self,
        value: Tensor<T>,
        inputs: &[Var],
        op: Box<dyn Backward<T>>,
    ) -> Result<Var> {
        let id = self.nodes.len();
        if inputs.iter().any(|v| v.0 >= id) {
            return Err(Error::CycleDetected(id));
        }
        if !value.all_finite() {
            return Err(Error::NonFinite { op: op.name() });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            inputs: inputs.to_vec(),
            op: Some(op),
            requires_grad,
        });
        Ok(Var(id))
    }

    /// Reverse sweep from a scalar `loss`, accumulating gradients for every
    /// node that requires one and is reachable from the loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let root = &self.nodes[loss.0];
        if root.value.len() != 1 {
            return Err(Error::NonScalarLoss(root.value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        if root.requires_grad {
            grads[loss.0] = Some(Tensor::ones(root.value.shape()));
        }
        for id in (0..=loss.0).rev() {
            let Some(grad) = grads[id].take() else {
                continue;
            };
            let node = &self.nodes[id];
            if let Some(op) = &node.op {
                if node.inputs.iter().any(|v| v.0 >= id) {
                    return Err(Error::CycleDetected(id));
                }
                let needs: Vec<bool> = node
                    .inputs
                    .iter()
                    .map(|v| self.nodes[v.0].requires_grad)
                    .collect();
                let ctx = BackwardCtx {
                    inputs: node.inputs.iter().map(|v| &self.nodes[v.0].value).collect(),
                    output: &node.value,
                    grad: &grad,
                    needs,
                };
                let input_grads = op.backward(&ctx)?;
                debug_assert_eq!(input_grads.len(), node.inputs.len(), "{}", op.name());
                for (input, g) in node.inputs.iter().zip(input_grads) {
                    let Some(g) = g else { continue };
                    if !self.nodes[input.0].requires_grad {
                        continue;
                    }
                    if !g.all_finite() {
                        return Err(Error::NonFinite { op: op.name() });
                    }
                    match &mut grads[input.0] {
                        Some(acc) => acc.add_assign(&g)?,
                        slot @ None => {
                            g.expect_shape(self.nodes[input.0].value.shape())?;
                            *slot = Some(g);
                        }
                    }
                }
            }
            grads[id] = Some(grad);
        }
        Ok(Gradients { grads })
    }

    /// Hash of every discrete decision taken by the recorded operators.
    pub fn decision_fingerprint(&self) -> u64 {
        let mut hasher = DefaultHasher::new();
        for node in &self.nodes {
            if let Some(op) = &node.op {
                let inputs: Vec<&Tensor<T>> =
                    node.inputs.iter().map(|v| &self.nodes[v.0].value).collect();
                op.decisions(&inputs, &node.value, &mut hasher);
            }
        }
        hasher.finish()
    }
}

/// Result of [`Tape::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}
