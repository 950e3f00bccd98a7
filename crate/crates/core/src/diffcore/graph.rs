use super::ops;
use super::{LayerParams, Tensor};
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

/// An operation implemented outside the graph (the quantum layer).
///
/// `backward` receives the upstream gradient of the op's output and returns
/// one gradient per input, in input order.
pub trait CustomOp: Send + Sync {
    fn backward(&self, upstream: &Tensor) -> Result<Vec<Tensor>>;
}

enum Op {
    Leaf,
    Param(String),
    Linear { x: NodeId, w: NodeId, b: NodeId },
    Conv2d { x: NodeId, k: NodeId, b: NodeId },
    Relu(NodeId),
    MaxPool2 { x: NodeId, argmax: Vec<usize> },
    TanhScale(NodeId),
    Reshape(NodeId),
    Softmax(NodeId),
    /// Loss node with its closed-form gradient on the input precomputed.
    Loss { input: NodeId, grad: Tensor },
    Sum(NodeId),
    Scale(NodeId, f64),
    Add(NodeId, NodeId),
    Custom { inputs: Vec<NodeId>, op: Box<dyn CustomOp> },
}

struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

/// Tape of tensor operations for reverse-mode differentiation.
///
/// Nodes are appended in evaluation order, so the tape is acyclic by
/// construction and reverse insertion order is a valid backward order.
/// A graph supports exactly one backward pass.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    consumed: bool,
}

/// Result of [`Graph::backward`].
pub struct Gradients {
    nodes: Vec<Option<Tensor>>,
    params: LayerParams,
}

impl Gradients {
    /// Gradient of a leaf (input or parameter) node, if any gradient reached it.
    pub fn node(&self, id: NodeId) -> Option<&Tensor> {
        self.nodes[id.0].as_ref()
    }

    /// Gradients of every parameter node, zero where the loss does not depend on it.
    pub fn params(&self) -> &LayerParams {
        &self.params
    }

    pub fn into_params(self) -> LayerParams {
        self.params
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, op: Op, value: Tensor, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn rg(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].requires_grad)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Constant input.
    pub fn input(&mut self, t: Tensor) -> NodeId {
        self.push(Op::Leaf, t, false)
    }

    /// Input whose gradient is wanted.
    pub fn input_with_grad(&mut self, t: Tensor) -> NodeId {
        self.push(Op::Leaf, t, true)
    }

    pub fn param(&mut self, name: impl Into<String>, t: Tensor) -> NodeId {
        self.push(Op::Param(name.into()), t, true)
    }

    pub fn linear(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let v = ops::linear(self.value(x), self.value(w), self.value(b))?;
        let rg = self.rg(&[x, w, b]);
        Ok(self.push(Op::Linear { x, w, b }, v, rg))
    }

    pub fn conv2d(&mut self, x: NodeId, k: NodeId, b: NodeId) -> Result<NodeId> {
        let v = ops::conv2d(self.value(x), self.value(k), self.value(b))?;
        let rg = self.rg(&[x, k, b]);
        Ok(self.push(Op::Conv2d { x, k, b }, v, rg))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let v = ops::relu(self.value(x));
        let rg = self.rg(&[x]);
        self.push(Op::Relu(x), v, rg)
    }

    pub fn maxpool2(&mut self, x: NodeId) -> Result<NodeId> {
        let (v, argmax) = ops::maxpool2(self.value(x))?;
        let rg = self.rg(&[x]);
        Ok(self.push(Op::MaxPool2 { x, argmax }, v, rg))
    }

    pub fn tanh_scale(&mut self, x: NodeId) -> NodeId {
        let v = ops::tanh_scale(self.value(x));
        let rg = self.rg(&[x]);
        self.push(Op::TanhScale(x), v, rg)
    }

    pub fn reshape(&mut self, x: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        let v = self.value(x).reshape(shape)?;
        let rg = self.rg(&[x]);
        Ok(self.push(Op::Reshape(x), v, rg))
    }

    /// Collapses all but the leading dimension.
    pub fn flatten(&mut self, x: NodeId) -> Result<NodeId> {
        let t = self.value(x);
        let shape = vec![t.rows(), t.row_len()];
        self.reshape(x, shape)
    }

    pub fn softmax(&mut self, logits: NodeId) -> Result<NodeId> {
        let v = ops::softmax(self.value(logits))?;
        let rg = self.rg(&[logits]);
        Ok(self.push(Op::Softmax(logits), v, rg))
    }

    /// Mean cross-entropy of `softmax(logits)` against probability targets.
    pub fn softmax_cross_entropy(&mut self, logits: NodeId, targets: &Tensor) -> Result<NodeId> {
        let w = vec![1.0; self.value(logits).rows()];
        self.weighted_cross_entropy(logits, targets, &w)
    }

    /// `sum_b w_b * CE_b / B`. Gradient on the logits is `w_b (p_b - t_b) / B`.
    pub fn weighted_cross_entropy(
        &mut self,
        logits: NodeId,
        targets: &Tensor,
        weights: &[f64],
    ) -> Result<NodeId> {
        let l = self.value(logits);
        if l.shape() != targets.shape() {
            return Err(Error::dim(format!(
                "logits {:?} vs targets {:?}",
                l.shape(),
                targets.shape()
            )));
        }
        if weights.len() != l.rows() {
            return Err(Error::dim("one weight per sample required"));
        }
        ops::check_distribution_rows(targets, "targets")?;
        let probs = ops::softmax(l)?;
        let per = ops::cross_entropy_rows(&probs, targets);
        let b = l.rows() as f64;
        let loss: f64 = per.iter().zip(weights).map(|(l, w)| l * w).sum::<f64>() / b;
        let k = l.shape()[1];
        let mut grad = probs;
        for (r, row) in grad.data_mut().chunks_mut(k).enumerate() {
            let t = targets.row(r);
            for (g, &tv) in row.iter_mut().zip(t) {
                *g = weights[r] * (*g - tv) / b;
            }
        }
        let rg = self.rg(&[logits]);
        Ok(self.push(Op::Loss { input: logits, grad }, Tensor::scalar(loss), rg))
    }

    /// Mean `KL(p || q)` where `p` is a node of probability rows and `q` a constant.
    pub fn kl_loss(&mut self, p: NodeId, q: &Tensor) -> Result<NodeId> {
        let pv = self.value(p);
        if pv.shape() != q.shape() {
            return Err(Error::dim(format!("p {:?} vs q {:?}", pv.shape(), q.shape())));
        }
        ops::check_distribution_rows(pv, "p")?;
        ops::check_distribution_rows(q, "q")?;
        let loss = ops::kl_rows(pv, q).iter().sum::<f64>() / pv.rows() as f64;
        let grad = ops::kl_grad_p(pv, q);
        let rg = self.rg(&[p]);
        Ok(self.push(Op::Loss { input: p, grad }, Tensor::scalar(loss), rg))
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let v = Tensor::scalar(self.value(x).sum());
        let rg = self.rg(&[x]);
        self.push(Op::Sum(x), v, rg)
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        let v = self.value(x).map(|v| v * c);
        let rg = self.rg(&[x]);
        self.push(Op::Scale(x, c), v, rg)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let mut v = self.value(a).clone();
        v.add_scaled(self.value(b), 1.0)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(Op::Add(a, b), v, rg))
    }

    /// Appends an externally computed node with the given output value.
    pub fn custom(&mut self, inputs: Vec<NodeId>, value: Tensor, op: Box<dyn CustomOp>) -> NodeId {
        let rg = self.rg(&inputs);
        self.push(Op::Custom { inputs, op }, value, rg)
    }

    /// Backpropagates from a scalar loss node.
    pub fn backward(&mut self, loss: NodeId) -> Result<Gradients> {
        let v = self.value(loss);
        if v.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                v.shape()
            )));
        }
        self.backward_seeded(loss, Tensor::full(v.shape(), 1.0))
    }

    /// Backpropagates an arbitrary upstream gradient `seed` from `node`.
    pub fn backward_seeded(&mut self, node: NodeId, seed: Tensor) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::Contract("graph already backpropagated; rerun forward".into()));
        }
        seed.expect_shape(self.value(node).shape())?;
        self.consumed = true;

        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[node.0] = Some(seed);

        for i in (0..=node.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let n = &self.nodes[i];
            if !n.requires_grad {
                continue;
            }
            let contributions: Vec<(NodeId, Tensor)> = match &n.op {
                Op::Leaf | Op::Param(_) => {
                    grads[i] = Some(g);
                    continue;
                }
                Op::Linear { x, w, b } => {
                    let (dx, dw, db) = ops::linear_backward(self.value(*x), self.value(*w), &g);
                    vec![(*x, dx), (*w, dw), (*b, db)]
                }
                Op::Conv2d { x, k, b } => {
                    let (dx, dk, db) = ops::conv2d_backward(self.value(*x), self.value(*k), &g);
                    vec![(*x, dx), (*k, dk), (*b, db)]
                }
                Op::Relu(x) => vec![(*x, ops::relu_backward(self.value(*x), &g))],
                Op::MaxPool2 { x, argmax } => {
                    vec![(*x, ops::maxpool2_backward(self.value(*x).shape(), argmax, &g))]
                }
                Op::TanhScale(x) => vec![(*x, ops::tanh_scale_backward(self.value(*x), &g))],
                Op::Reshape(x) => vec![(*x, g.reshape(self.value(*x).shape().to_vec())?)],
                Op::Softmax(x) => vec![(*x, ops::softmax_backward(&n.value, &g))],
                Op::Loss { input, grad } => {
                    let s = g.data()[0];
                    vec![(*input, grad.map(|v| v * s))]
                }
                Op::Sum(x) => {
                    let s = g.data()[0];
                    vec![(*x, Tensor::full(self.value(*x).shape(), s))]
                }
                Op::Scale(x, c) => vec![(*x, g.map(|v| v * c))],
                Op::Add(a, b) => vec![(*a, g.clone()), (*b, g)],
                Op::Custom { inputs, op } => {
                    let gs = op.backward(&g)?;
                    if gs.len() != inputs.len() {
                        return Err(Error::Contract("custom op returned wrong gradient count".into()));
                    }
                    inputs.iter().copied().zip(gs).collect()
                }
            };
            for (id, c) in contributions {
                if !self.nodes[id.0].requires_grad {
                    continue;
                }
                match &mut grads[id.0] {
                    Some(acc) => acc.add_scaled(&c, 1.0)?,
                    slot @ None => *slot = Some(c),
                }
            }
        }

        let mut params = LayerParams::new();
        for (i, n) in self.nodes.iter().enumerate() {
            if let Op::Param(name) = &n.op {
                let g = grads[i]
                    .clone()
                    .unwrap_or_else(|| Tensor::zeros(n.value.shape()));
                params.insert(name.clone(), g);
            }
        }
        Ok(Gradients {
            nodes: grads,
            params,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_params_has_unit_gradient() {
        let mut g = Graph::new();
        let a = g.param("a", Tensor::vector(vec![1.0, -2.0, 3.0]));
        let _unused = g.param("b", Tensor::vector(vec![5.0]));
        let s = g.sum(a);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.params().get("a").unwrap().data(), &[1.0, 1.0, 1.0]);
        assert_eq!(grads.params().get("b").unwrap().data(), &[0.0]);
    }

    #[test]
    fn second_backward_is_rejected() {
        let mut g = Graph::new();
        let a = g.param("a", Tensor::vector(vec![1.0]));
        let s = g.sum(a);
        g.backward(s).unwrap();
        assert!(matches!(g.backward(s), Err(Error::Contract(_))));
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut g = Graph::new();
        let a = g.param("a", Tensor::vector(vec![1.0, 2.0]));
        assert!(matches!(g.backward(a), Err(Error::Contract(_))));
    }

    #[test]
    fn uniform_logits_cross_entropy_is_ln3() {
        let mut g = Graph::new();
        let l = g.param("l", Tensor::from_rows(&[vec![0.3, 0.3, 0.3]]).unwrap());
        let t = Tensor::from_rows(&[vec![0.0, 1.0, 0.0]]).unwrap();
        let loss = g.softmax_cross_entropy(l, &t).unwrap();
        assert!((g.value(loss).data()[0] - 3f64.ln()).abs() < 1e-12);
        let grads = g.backward(loss).unwrap();
        let d = grads.params().get("l").unwrap().data().to_vec();
        let third = 1.0 / 3.0;
        assert!((d[0] - third).abs() < 1e-12 && (d[1] - (third - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn soft_target_equal_to_prediction_gives_entropy() {
        let logits = Tensor::from_rows(&[vec![0.5, -1.0, 2.0]]).unwrap();
        let p = ops::softmax(&logits).unwrap();
        let entropy: f64 = -p.data().iter().map(|v| v * v.ln()).sum::<f64>();
        let mut g = Graph::new();
        let l = g.input(logits);
        let loss = g.softmax_cross_entropy(l, &p).unwrap();
        assert!((g.value(loss).data()[0] - entropy).abs() < 1e-12);
    }

    #[test]
    fn targets_must_be_distributions() {
        let mut g = Graph::new();
        let l = g.input(Tensor::zeros(&[1, 2]));
        let t = Tensor::from_rows(&[vec![0.5, 0.4]]).unwrap();
        assert!(matches!(g.softmax_cross_entropy(l, &t), Err(Error::Validation(_))));
    }

    #[test]
    fn kl_loss_rejects_negative_entries() {
        let mut g = Graph::new();
        let p = g.input(Tensor::from_rows(&[vec![1.2, -0.2]]).unwrap());
        let q = Tensor::from_rows(&[vec![0.5, 0.5]]).unwrap();
        assert!(matches!(g.kl_loss(p, &q), Err(Error::Validation(_))));
    }

    #[test]
    fn gradient_fans_in_across_uses() {
        // loss = sum(2a + a) -> d/da = 3
        let mut g = Graph::new();
        let a = g.param("a", Tensor::vector(vec![1.0, 2.0]));
        let s = g.scale(a, 2.0);
        let t = g.add(s, a).unwrap();
        let l = g.sum(t);
        let grads = g.backward(l).unwrap();
        assert_eq!(grads.params().get("a").unwrap().data(), &[3.0, 3.0]);
    }
}
