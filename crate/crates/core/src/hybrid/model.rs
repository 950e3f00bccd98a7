use std::sync::Arc;

use rayon::prelude::*;

use super::arch::ArchSpec;
use crate::diffcore::{angle_uniform, glorot_uniform, group_of, CustomOp, Graph, LayerParams, NodeId, Tensor};
use crate::error::{Error, Result};
use crate::qsim::{adjoint_from_state, run_circuit, CircuitLayout, StateVector};
use crate::rng::{stream, Stream};

/// Rows per forward pass when evaluating large sets.
const EVAL_CHUNK: usize = 256;

/// Classical extractor, projection, `pi * tanh` angle bounding, VQC,
/// `<Z>` readout and classical head, holding the joint parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct HybridModel {
    spec: ArchSpec,
    params: LayerParams,
    generation: u64,
}

/// Objective attached to a forward pass before backpropagating.
#[derive(Debug, Clone)]
pub enum Loss {
    /// Mean cross-entropy against probability targets, optionally with
    /// per-sample weights (negative weights ascend).
    CrossEntropy {
        targets: Tensor,
        weights: Option<Vec<f64>>,
    },
    /// Mean `KL(prediction || target)`.
    Kl { target: Tensor },
    /// Weighted sum of objectives on the same batch.
    Sum(Vec<(f64, Loss)>),
}

/// Output of [`HybridModel::loss_backward`].
#[derive(Debug, Clone)]
pub struct LossGrad {
    pub loss: f64,
    pub params: LayerParams,
    pub input: Tensor,
}

/// Everything a backward pass needs from one forward pass.
pub struct ForwardCache {
    graph: Graph,
    input: NodeId,
    logits: NodeId,
    probs: NodeId,
    angles: NodeId,
    states: Arc<Vec<StateVector>>,
    generation: u64,
}

impl ForwardCache {
    pub fn probs(&self) -> &Tensor {
        self.graph.value(self.probs)
    }

    pub fn logits(&self) -> &Tensor {
        self.graph.value(self.logits)
    }

    /// Encoding angles fed to the VQC, `[B, q]`.
    pub fn angles(&self) -> &Tensor {
        self.graph.value(self.angles)
    }

    /// Output state of the VQC for every sample.
    pub fn states(&self) -> &[StateVector] {
        &self.states
    }
}

/// The VQC as a graph node: inputs are `[angles [B,q], theta]`, output `<Z>` `[B,q]`.
struct QuantumLayer {
    layout: CircuitLayout,
    theta: Vec<f64>,
    angles: Tensor,
    states: Arc<Vec<StateVector>>,
}

impl CustomOp for QuantumLayer {
    fn backward(&self, upstream: &Tensor) -> Result<Vec<Tensor>> {
        let q = self.layout.qubits;
        let per_sample: Vec<_> = (0..self.states.len())
            .into_par_iter()
            .map(|b| {
                adjoint_from_state(
                    &self.layout,
                    &self.theta,
                    self.angles.row(b),
                    &self.states[b],
                    upstream.row(b),
                )
            })
            .collect::<Result<_>>()?;
        let mut d_theta = vec![0.0; self.theta.len()];
        let mut d_angles = Vec::with_capacity(self.angles.len());
        for g in per_sample {
            for (a, v) in d_theta.iter_mut().zip(&g.d_params) {
                *a += v;
            }
            d_angles.extend_from_slice(&g.d_angles);
        }
        Ok(vec![
            Tensor::new(vec![self.states.len(), q], d_angles)?,
            Tensor::vector(d_theta),
        ])
    }
}

impl HybridModel {
    /// Fresh model with seeded initialisation: Glorot-uniform weights, zero
    /// biases, rotation angles uniform in `[-pi, pi]`.
    pub fn build(spec: ArchSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = stream(seed, Stream::Init);
        let mut params = LayerParams::new();
        for (name, shape, fan_in, fan_out) in spec.tensor_layout() {
            let t = if name == "vqc.theta" {
                angle_uniform(&shape, &mut rng)
            } else if name.ends_with(".bias") || name.ends_with("bias") {
                Tensor::zeros(&shape)
            } else {
                glorot_uniform(&shape, fan_in, fan_out, &mut rng)
            };
            params.insert(name, t);
        }
        Ok(HybridModel {
            spec,
            params,
            generation: 0,
        })
    }

    /// Wraps existing parameters, checking every expected tensor is present
    /// with the right shape and nothing else is.
    pub fn from_params(spec: ArchSpec, params: LayerParams) -> Result<Self> {
        spec.validate()?;
        let layout = spec.tensor_layout();
        if layout.len() != params.len() {
            return Err(Error::dim(format!(
                "{} tensors for a model with {}",
                params.len(),
                layout.len()
            )));
        }
        for (name, shape, ..) in &layout {
            let t = params
                .get(name)
                .ok_or_else(|| Error::dim(format!("missing tensor {name}")))?;
            t.expect_shape(shape)?;
        }
        Ok(HybridModel {
            spec,
            params,
            generation: 0,
        })
    }

    pub fn spec(&self) -> &ArchSpec {
        &self.spec
    }

    pub fn params(&self) -> &LayerParams {
        &self.params
    }

    /// Mutable access to the parameters. Invalidates outstanding forward caches.
    pub fn params_mut(&mut self) -> &mut LayerParams {
        self.generation += 1;
        &mut self.params
    }

    pub fn set_params(&mut self, params: LayerParams) -> Result<()> {
        let checked = HybridModel::from_params(self.spec.clone(), params)?;
        self.params = checked.params;
        self.generation += 1;
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.params.count()
    }

    pub fn layout(&self) -> CircuitLayout {
        CircuitLayout {
            qubits: self.spec.qubits,
            layers: self.spec.layers,
        }
    }

    /// Layer groups, output side first.
    pub fn layer_groups(&self) -> Vec<&'static str> {
        self.spec.layer_groups()
    }

    /// Parameter names belonging to the first `k` groups of [`Self::layer_groups`].
    pub fn group_names(&self, k: usize) -> Vec<String> {
        let groups = self.layer_groups();
        let chosen = &groups[..k.min(groups.len())];
        self.params
            .names()
            .filter(|n| chosen.contains(&group_of(n)))
            .map(str::to_owned)
            .collect()
    }

    fn check_input(&self, batch: &Tensor) -> Result<()> {
        let want = self.spec.sample_shape();
        if batch.rank() != want.len() + 1 || batch.shape()[1..] != want[..] {
            return Err(Error::dim(format!(
                "{} model expects [B, {}], got {:?}",
                self.spec.dataset,
                want.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(", "),
                batch.shape()
            )));
        }
        Ok(())
    }

    fn p(&self, g: &mut Graph, name: &str) -> Result<NodeId> {
        Ok(g.param(name, self.params.require(name)?.clone()))
    }

    /// Forward pass to class probabilities.
    pub fn forward(&self, batch: &Tensor) -> Result<(Tensor, ForwardCache)> {
        self.check_input(batch)?;
        let mut g = Graph::new();
        let input = g.input_with_grad(batch.clone());

        let mut h = input;
        if self.spec.dataset.is_image() {
            for conv in ["conv1", "conv2"] {
                let w = self.p(&mut g, &format!("extractor.{conv}.weight"))?;
                let b = self.p(&mut g, &format!("extractor.{conv}.bias"))?;
                let c = g.conv2d(h, w, b)?;
                let r = g.relu(c);
                h = g.maxpool2(r)?;
            }
            h = g.flatten(h)?;
        }

        let pw = self.p(&mut g, "projection.weight")?;
        let pb = self.p(&mut g, "projection.bias")?;
        let proj = g.linear(h, pw, pb)?;
        let angles = g.tanh_scale(proj);

        let layout = self.layout();
        let theta = self.params.require("vqc.theta")?.data().to_vec();
        let angle_t = g.value(angles).clone();
        let states: Vec<StateVector> = (0..angle_t.rows())
            .into_par_iter()
            .map(|b| run_circuit(&layout, &theta, angle_t.row(b)))
            .collect::<Result<_>>()?;
        let q = layout.qubits;
        let z: Vec<f64> = states.iter().flat_map(|s| s.expect_z()).collect();
        let z = Tensor::new(vec![angle_t.rows(), q], z)?;
        let states = Arc::new(states);
        let theta_node = self.p(&mut g, "vqc.theta")?;
        let zq = g.custom(
            vec![angles, theta_node],
            z,
            Box::new(QuantumLayer {
                layout,
                theta,
                angles: angle_t,
                states: Arc::clone(&states),
            }),
        );

        let logits = match self.spec.head_hidden {
            Some(_) => {
                let w1 = self.p(&mut g, "head.fc1.weight")?;
                let b1 = self.p(&mut g, "head.fc1.bias")?;
                let hid = g.linear(zq, w1, b1)?;
                let hid = g.relu(hid);
                let w2 = self.p(&mut g, "head.fc2.weight")?;
                let b2 = self.p(&mut g, "head.fc2.bias")?;
                g.linear(hid, w2, b2)?
            }
            None => {
                let w = self.p(&mut g, "head.weight")?;
                let b = self.p(&mut g, "head.bias")?;
                g.linear(zq, w, b)?
            }
        };
        let probs = g.softmax(logits)?;
        let out = g.value(probs).clone();
        Ok((
            out,
            ForwardCache {
                graph: g,
                input,
                logits,
                probs,
                angles,
                states,
                generation: self.generation,
            },
        ))
    }

    fn check_fresh(&self, cache: &ForwardCache) -> Result<()> {
        if cache.generation != self.generation {
            return Err(Error::Contract(
                "forward cache is stale: parameters changed since the forward pass".into(),
            ));
        }
        Ok(())
    }

    /// Backpropagates an upstream gradient on the probabilities. Returns
    /// parameter gradients and the gradient with respect to the raw input.
    pub fn backward(&self, cache: ForwardCache, d_probs: &Tensor) -> Result<(LayerParams, Tensor)> {
        self.check_fresh(&cache)?;
        let ForwardCache {
            mut graph,
            input,
            probs,
            ..
        } = cache;
        let grads = graph.backward_seeded(probs, d_probs.clone())?;
        let dx = grads
            .node(input)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(graph.value(input).shape()));
        Ok((grads.into_params(), dx))
    }

    fn attach(&self, g: &mut Graph, logits: NodeId, probs: NodeId, loss: &Loss) -> Result<NodeId> {
        match loss {
            Loss::CrossEntropy { targets, weights } => match weights {
                Some(w) => g.weighted_cross_entropy(logits, targets, w),
                None => g.softmax_cross_entropy(logits, targets),
            },
            Loss::Kl { target } => g.kl_loss(probs, target),
            Loss::Sum(terms) => {
                let mut acc: Option<NodeId> = None;
                for (w, term) in terms {
                    let node = self.attach(g, logits, probs, term)?;
                    let scaled = g.scale(node, *w);
                    acc = Some(match acc {
                        Some(a) => g.add(a, scaled)?,
                        None => scaled,
                    });
                }
                acc.ok_or_else(|| Error::validation("empty loss sum"))
            }
        }
    }

    /// Attaches `loss` to a forward pass and backpropagates it.
    pub fn loss_backward(&self, cache: ForwardCache, loss: &Loss) -> Result<LossGrad> {
        self.check_fresh(&cache)?;
        let ForwardCache {
            mut graph,
            input,
            logits,
            probs,
            ..
        } = cache;
        let node = self.attach(&mut graph, logits, probs, loss)?;
        let value = graph.value(node).data()[0];
        let grads = graph.backward(node)?;
        let dx = grads
            .node(input)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(graph.value(input).shape()));
        Ok(LossGrad {
            loss: value,
            params: grads.into_params(),
            input: dx,
        })
    }

    /// Forward plus [`Self::loss_backward`] in one call.
    pub fn loss_grad(&self, batch: &Tensor, loss: &Loss) -> Result<LossGrad> {
        let (_, cache) = self.forward(batch)?;
        self.loss_backward(cache, loss)
    }

    /// Class probabilities for every row of `inputs`, evaluated in chunks.
    pub fn predict(&self, inputs: &Tensor) -> Result<Tensor> {
        Ok(self.predict_with_states(inputs)?.0)
    }

    /// Probabilities plus the VQC output state of every row.
    pub fn predict_with_states(&self, inputs: &Tensor) -> Result<(Tensor, Vec<StateVector>)> {
        self.check_input(inputs)?;
        let n = inputs.rows();
        let mut data = Vec::with_capacity(n * self.spec.classes);
        let mut states = Vec::with_capacity(n);
        for start in (0..n).step_by(EVAL_CHUNK) {
            let idx: Vec<usize> = (start..(start + EVAL_CHUNK).min(n)).collect();
            let (p, cache) = self.forward(&inputs.select_rows(&idx)?)?;
            data.extend_from_slice(p.data());
            states.extend(cache.states().iter().cloned());
        }
        Ok((Tensor::new(vec![n, self.spec.classes], data)?, states))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hybrid::ArchSpec;

    fn iris_batch() -> Tensor {
        Tensor::from_rows(&[
            vec![0.5, -1.0, 0.3, 2.0],
            vec![-0.2, 0.1, 0.0, -1.5],
            vec![0.5, -1.0, 0.3, 2.0],
        ])
        .unwrap()
    }

    #[test]
    fn same_seed_same_parameters() {
        let a = HybridModel::build(ArchSpec::iris(), 11).unwrap();
        let b = HybridModel::build(ArchSpec::iris(), 11).unwrap();
        let c = HybridModel::build(ArchSpec::iris(), 12).unwrap();
        assert_eq!(a.params(), b.params());
        assert_ne!(a.params(), c.params());
        assert_eq!(a.param_count(), 51);
    }

    #[test]
    fn rows_sum_to_one_and_duplicates_agree() {
        let m = HybridModel::build(ArchSpec::iris(), 1).unwrap();
        let (p, cache) = m.forward(&iris_batch()).unwrap();
        for r in 0..3 {
            assert!((p.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        assert_eq!(p.row(0), p.row(2));
        for s in cache.states() {
            assert!((s.norm_sqr() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn input_shape_is_checked() {
        let m = HybridModel::build(ArchSpec::iris(), 1).unwrap();
        assert!(matches!(m.forward(&Tensor::zeros(&[2, 5])), Err(Error::Dimension(_))));
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let m = HybridModel::build(ArchSpec::iris(), 2).unwrap();
        let (p, cache) = m.forward(&iris_batch()).unwrap();
        let (gp, gx) = m.backward(cache, &Tensor::zeros(p.shape())).unwrap();
        assert!(gp.flatten().iter().all(|&v| v == 0.0));
        assert!(gx.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn stale_cache_is_rejected() {
        let mut m = HybridModel::build(ArchSpec::iris(), 2).unwrap();
        let (p, cache) = m.forward(&iris_batch()).unwrap();
        m.params_mut().get_mut("head.bias").unwrap().data_mut()[0] += 1.0;
        assert!(matches!(
            m.backward(cache, &Tensor::zeros(p.shape())),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn group_selection() {
        let m = HybridModel::build(ArchSpec::fashion(), 0).unwrap();
        assert_eq!(
            m.group_names(1),
            ["head.fc1.bias", "head.fc1.weight", "head.fc2.bias", "head.fc2.weight"]
        );
        assert_eq!(m.group_names(4).len(), m.params().len());
        assert_eq!(m.group_names(9).len(), m.params().len());
    }

    #[test]
    fn image_forward_shapes() {
        let m = HybridModel::build(ArchSpec::mnist(), 0).unwrap();
        let x = Tensor::full(&[2, 1, 28, 28], 0.5);
        let (p, cache) = m.forward(&x).unwrap();
        assert_eq!(p.shape(), &[2, 10]);
        assert_eq!(cache.states()[0].qubits(), 6);
    }
}
