//! Reverse-mode autodiff over a flat tape.
//!
//! Nodes are appended in creation order, which is already a topological
//! order, so the backward pass is a single reverse sweep. Forward values are
//! computed by the same kernels as the plain (untaped) code paths.

use super::{
    add, add_row, col_sum, feature_mse, matmul, matmul_nt, matmul_tn, relu, relu_backward, scale,
    softmax_ce, softmax_ce_backward, sum, Target, Tensor,
};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Matmul(NodeId, NodeId),
    Add(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    Relu(NodeId),
    Sum(NodeId),
    FeatureMse { s: NodeId, t: NodeId, beta: f64 },
    SoftmaxCeHard { logits: NodeId, labels: Vec<u32>, temperature: f64 },
    SoftmaxCeSoft { logits: NodeId, targets: Tensor, temperature: f64 },
}

struct Node {
    op: Op,
    value: Tensor,
    grad: Option<Tensor>,
    trainable: bool,
}

/// Computation tape. Build one per training iteration, run the forward ops,
/// call [`Tape::backward`], then read gradients off the leaves.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    fn push(&mut self, op: Op, value: Tensor, trainable: bool) -> NodeId {
        self.nodes.push(Node { op, value, grad: None, trainable });
        NodeId(self.nodes.len() - 1)
    }

    /// Register a leaf. Trainable leaves receive gradients in `backward`.
    pub fn leaf(&mut self, value: Tensor, trainable: bool) -> NodeId {
        self.push(Op::Leaf, value, trainable)
    }

    /// Non-trainable leaf.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.leaf(value, false)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Value of a 1×1 node.
    pub fn scalar(&self, id: NodeId) -> Result<f64> {
        let v = self.value(id);
        if v.shape() != (1, 1) {
            return Err(Error::Shape(format!(
                "expected scalar node, got {}x{}",
                v.rows(),
                v.cols()
            )));
        }
        Ok(v.data()[0])
    }

    /// Gradient of the last backward pass w.r.t. `id`. Zero tensor for
    /// trainable leaves the loss does not reach.
    pub fn grad(&self, id: NodeId) -> Result<&Tensor> {
        self.nodes[id.0]
            .grad
            .as_ref()
            .ok_or_else(|| Error::Invariant("grad read before backward".into()))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = matmul(self.value(a), self.value(b))?;
        Ok(self.push(Op::Matmul(a, b), v, false))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = add(self.value(a), self.value(b))?;
        Ok(self.push(Op::Add(a, b), v, false))
    }

    /// Broadcast-add a 1×n bias row to every row of `m`.
    pub fn add_row(&mut self, m: NodeId, row: NodeId) -> Result<NodeId> {
        let v = add_row(self.value(m), self.value(row))?;
        Ok(self.push(Op::AddRow(m, row), v, false))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let v = relu(self.value(x));
        self.push(Op::Relu(x), v, false)
    }

    /// Sum of all entries, as a 1×1 node.
    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let v = Tensor::from_vec(1, 1, vec![sum(self.value(x))]).unwrap();
        self.push(Op::Sum(x), v, false)
    }

    pub fn feature_mse(&mut self, s: NodeId, t: NodeId, beta: f64) -> Result<NodeId> {
        let v = feature_mse(self.value(s), self.value(t), beta)?;
        let v = Tensor::from_vec(1, 1, vec![v]).unwrap();
        Ok(self.push(Op::FeatureMse { s, t, beta }, v, false))
    }

    pub fn softmax_ce_hard(
        &mut self,
        logits: NodeId,
        labels: &[u32],
        temperature: f64,
    ) -> Result<NodeId> {
        let v = softmax_ce(self.value(logits), Target::Hard(labels), temperature)?;
        let v = Tensor::from_vec(1, 1, vec![v]).unwrap();
        Ok(self.push(
            Op::SoftmaxCeHard { logits, labels: labels.to_vec(), temperature },
            v,
            false,
        ))
    }

    pub fn softmax_ce_soft(
        &mut self,
        logits: NodeId,
        targets: &Tensor,
        temperature: f64,
    ) -> Result<NodeId> {
        let v = softmax_ce(self.value(logits), Target::Soft(targets), temperature)?;
        let v = Tensor::from_vec(1, 1, vec![v]).unwrap();
        Ok(self.push(
            Op::SoftmaxCeSoft { logits, targets: targets.clone(), temperature },
            v,
            false,
        ))
    }

    /// Reverse sweep from `loss`. Gradients of all nodes are overwritten;
    /// trainable leaves not reachable from the loss end up with zero
    /// gradients.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        self.backward_impl(loss, false)
    }

    /// Like [`Tape::backward`], but adds into existing gradients instead of
    /// overwriting them.
    pub fn backward_accumulate(&mut self, loss: NodeId) -> Result<()> {
        self.backward_impl(loss, true)
    }

    fn backward_impl(&mut self, loss: NodeId, accumulate: bool) -> Result<()> {
        if self.value(loss).shape() != (1, 1) {
            let (r, c) = self.value(loss).shape();
            return Err(Error::InvalidArg(format!(
                "backward needs a scalar loss, got {r}x{c}"
            )));
        }

        // Per-pass gradients, separate from any previously stored ones.
        let mut grads: Vec<Tensor> = self
            .nodes
            .iter()
            .map(|n| Tensor::zeros(n.value.rows(), n.value.cols()))
            .collect();
        grads[loss.0].data_mut()[0] = 1.0;

        for i in (0..=loss.0).rev() {
            let op = self.nodes[i].op.clone();
            match op {
                Op::Leaf => {}
                Op::Matmul(a, b) => {
                    let up = grads[i].clone();
                    let da = matmul_nt(&up, self.value(b))?;
                    let db = matmul_tn(self.value(a), &up)?;
                    accumulate_into(&mut grads[a.0], &da);
                    accumulate_into(&mut grads[b.0], &db);
                }
                Op::Add(a, b) => {
                    let up = grads[i].clone();
                    accumulate_into(&mut grads[a.0], &up);
                    accumulate_into(&mut grads[b.0], &up);
                }
                Op::AddRow(m, row) => {
                    let up = grads[i].clone();
                    accumulate_into(&mut grads[m.0], &up);
                    let drow = col_sum(&up);
                    accumulate_into(&mut grads[row.0], &drow);
                }
                Op::Relu(x) => {
                    let up = grads[i].clone();
                    let dx = relu_backward(&up, self.value(x));
                    accumulate_into(&mut grads[x.0], &dx);
                }
                Op::Sum(x) => {
                    let up = grads[i].data()[0];
                    let v = self.value(x);
                    let dx = Tensor::filled(v.rows(), v.cols(), up);
                    accumulate_into(&mut grads[x.0], &dx);
                }
                Op::FeatureMse { s, t, beta } => {
                    let up = grads[i].data()[0];
                    // d/ds of beta/b · Σ (s − t)² is 2β/b (s − t).
                    let b = self.value(s).rows() as f64;
                    let diff = super::sub(self.value(s), self.value(t))?;
                    let ds = scale(&diff, up * 2.0 * beta / b);
                    let dt = scale(&diff, -up * 2.0 * beta / b);
                    accumulate_into(&mut grads[s.0], &ds);
                    accumulate_into(&mut grads[t.0], &dt);
                }
                Op::SoftmaxCeHard { logits, labels, temperature } => {
                    let up = grads[i].data()[0];
                    let dz =
                        softmax_ce_backward(self.value(logits), Target::Hard(&labels), temperature)?;
                    accumulate_into(&mut grads[logits.0], &scale(&dz, up));
                }
                Op::SoftmaxCeSoft { logits, targets, temperature } => {
                    let up = grads[i].data()[0];
                    let dz =
                        softmax_ce_backward(self.value(logits), Target::Soft(&targets), temperature)?;
                    accumulate_into(&mut grads[logits.0], &scale(&dz, up));
                }
            }
        }

        for (node, g) in self.nodes.iter_mut().zip(grads) {
            match (&mut node.grad, accumulate) {
                (Some(old), true) => {
                    for (o, n) in old.data_mut().iter_mut().zip(g.data()) {
                        *o += n;
                    }
                }
                _ => node.grad = Some(g),
            }
        }
        Ok(())
    }

    /// Trainable leaves in creation order.
    pub fn trainable_leaves(&self) -> Vec<NodeId> {
        self.nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| n.trainable && matches!(n.op, Op::Leaf))
            .map(|(i, _)| NodeId(i))
            .collect()
    }
}

fn accumulate_into(acc: &mut Tensor, g: &Tensor) {
    debug_assert_eq!(acc.shape(), g.shape());
    for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
        *a += b;
    }
}
