use serde::{Deserialize, Serialize};

use crate::diffcore::{LayerParams, Tensor};
use crate::error::{Error, Result};

/// Adam moments and step counter. Moments are created lazily for the
/// tensors that receive gradients, so a partial gradient map updates only
/// those tensors (this is how layer freezing is expressed).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    #[serde(skip)]
    m: LayerParams,
    #[serde(skip)]
    v: LayerParams,
}

impl Default for OptimizerState {
    fn default() -> Self {
        OptimizerState {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: LayerParams::new(),
            v: LayerParams::new(),
        }
    }
}

impl OptimizerState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn first_moment(&self, name: &str) -> Option<&Tensor> {
        self.m.get(name)
    }

    pub fn second_moment(&self, name: &str) -> Option<&Tensor> {
        self.v.get(name)
    }
}

/// One bias-corrected Adam update of every tensor named in `grads`.
pub fn adam_step(params: &mut LayerParams, grads: &LayerParams, state: &mut OptimizerState, lr: f64) -> Result<()> {
    for (name, g) in grads.iter() {
        let p = params
            .get(name)
            .ok_or_else(|| Error::dim(format!("gradient for unknown tensor {name}")))?;
        if p.shape() != g.shape() {
            return Err(Error::dim(format!(
                "{name}: parameter {:?} vs gradient {:?}",
                p.shape(),
                g.shape()
            )));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for (name, g) in grads.iter() {
        if state.m.get(name).is_none() {
            state.m.insert(name, Tensor::zeros(g.shape()));
            state.v.insert(name, Tensor::zeros(g.shape()));
        }
        let m = state.m.get_mut(name).expect("inserted").data_mut();
        let v = state.v.get_mut(name).expect("inserted").data_mut();
        let p = params.get_mut(name).expect("checked").data_mut();
        for i in 0..p.len() {
            let gi = g.data()[i];
            m[i] = b1 * m[i] + (1.0 - b1) * gi;
            v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
            let mh = m[i] / c1;
            let vh = v[i] / c2;
            p[i] -= lr * mh / (vh.sqrt() + eps);
        }
    }
    Ok(())
}
