use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::Rng as _;

use super::Tensor;
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Named parameter tensors, iterated in lexicographic name order.
///
/// Names are dotted paths whose first segment is the layer group
/// (`head.fc.weight`, `vqc.theta`, ...).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LayerParams {
    tensors: BTreeMap<String, Tensor>,
}

impl LayerParams {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.tensors.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor> {
        self.get(name)
            .ok_or_else(|| Error::Contract(format!("missing parameter {name}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    /// Same names and shapes, all zero.
    pub fn zeros_like(&self) -> Self {
        LayerParams {
            tensors: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), Tensor::zeros(v.shape())))
                .collect(),
        }
    }

    /// `self += scale * other` for every tensor of `other`.
    pub fn add_scaled(&mut self, other: &LayerParams, scale: f64) -> Result<()> {
        for (name, t) in other.iter() {
            let dst = self
                .tensors
                .get_mut(name)
                .ok_or_else(|| Error::dim(format!("no parameter named {name}")))?;
            dst.add_scaled(t, scale)?;
        }
        Ok(())
    }

    /// Keeps only tensors whose name satisfies `keep`.
    pub fn retain(&mut self, mut keep: impl FnMut(&str) -> bool) {
        self.tensors.retain(|k, _| keep(k));
    }

    /// Flattened values in name order.
    pub fn flatten(&self) -> Vec<f64> {
        self.tensors
            .values()
            .flat_map(|t| t.data().iter().copied())
            .collect()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.values().all(Tensor::all_finite)
    }
}

/// Group id of a dotted parameter name.
pub fn group_of(name: &str) -> &str {
    name.split('.').next().unwrap_or(name)
}

/// Glorot-uniform weights in `[-s, s]`, `s = sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut Rng) -> Tensor {
    let s = (6.0 / (fan_in + fan_out) as f64).sqrt();
    uniform(shape, s, rng)
}

/// Rotation angles uniform in `[-pi, pi]`.
pub fn angle_uniform(shape: &[usize], rng: &mut Rng) -> Tensor {
    uniform(shape, PI, rng)
}

fn uniform(shape: &[usize], bound: f64, rng: &mut Rng) -> Tensor {
    let mut t = Tensor::zeros(shape);
    for v in t.data_mut() {
        *v = rng.random_range(-bound..=bound);
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};

    #[test]
    fn iteration_is_lexicographic() {
        let mut p = LayerParams::new();
        p.insert("vqc.theta", Tensor::zeros(&[2]));
        p.insert("head.fc.weight", Tensor::zeros(&[1]));
        p.insert("projection.bias", Tensor::zeros(&[3]));
        let names: Vec<_> = p.names().collect();
        assert_eq!(names, ["head.fc.weight", "projection.bias", "vqc.theta"]);
        assert_eq!(p.count(), 6);
    }

    #[test]
    fn init_respects_bounds() {
        let mut rng = stream(3, Stream::Init);
        let w = glorot_uniform(&[10, 20], 10, 20, &mut rng);
        let s = (6.0f64 / 30.0).sqrt();
        assert!(w.data().iter().all(|v| v.abs() <= s));
        let a = angle_uniform(&[100], &mut rng);
        assert!(a.data().iter().all(|v| v.abs() <= PI));
    }

    #[test]
    fn group_is_first_segment() {
        assert_eq!(group_of("extractor.conv1.weight"), "extractor");
        assert_eq!(group_of("vqc"), "vqc");
    }
}
