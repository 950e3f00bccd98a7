use crate::diffcore::Tensor;
use crate::error::{Error, Result};

/// Labeled samples. `ids` are positions in the pool the set was drawn from,
/// so partitions can be checked at index level.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSet {
    inputs: Tensor,
    labels: Vec<usize>,
    classes: usize,
    ids: Vec<usize>,
}

impl LabeledSet {
    pub fn new(inputs: Tensor, labels: Vec<usize>, classes: usize) -> Result<Self> {
        let ids = (0..labels.len()).collect();
        Self::with_ids(inputs, labels, classes, ids)
    }

    pub fn with_ids(inputs: Tensor, labels: Vec<usize>, classes: usize, ids: Vec<usize>) -> Result<Self> {
        if inputs.rows() != labels.len() || ids.len() != labels.len() {
            return Err(Error::dim(format!(
                "{} input rows, {} labels, {} ids",
                inputs.rows(),
                labels.len(),
                ids.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
            return Err(Error::validation(format!("label {bad} outside 0..{classes}")));
        }
        Ok(LabeledSet {
            inputs,
            labels,
            classes,
            ids,
        })
    }

    pub fn inputs(&self) -> &Tensor {
        &self.inputs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Rows at positions `idx` (positions in this set, not ids).
    pub fn select(&self, idx: &[usize]) -> Result<Self> {
        if idx.is_empty() {
            return Err(Error::validation("empty selection"));
        }
        Ok(LabeledSet {
            inputs: self.inputs.select_rows(idx)?,
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
            ids: idx.iter().map(|&i| self.ids[i]).collect(),
        })
    }

    /// Positions of samples with label `c`.
    pub fn positions_of(&self, c: usize) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.labels[i] == c).collect()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut n = vec![0; self.classes];
        for &y in &self.labels {
            n[y] += 1;
        }
        n
    }

    /// One-hot targets `[N, K]`.
    pub fn one_hot(&self) -> Tensor {
        one_hot(&self.labels, self.classes)
    }

    /// Same samples with replacement labels.
    pub fn relabeled(&self, labels: Vec<usize>) -> Result<Self> {
        Self::with_ids(self.inputs.clone(), labels, self.classes, self.ids.clone())
    }

    /// Rows of `self` followed by rows of `other`.
    pub fn concat(&self, other: &LabeledSet) -> Result<Self> {
        if self.classes != other.classes || self.inputs.shape()[1..] != other.inputs.shape()[1..] {
            return Err(Error::dim("cannot concatenate sets of different shape"));
        }
        let mut shape = self.inputs.shape().to_vec();
        shape[0] += other.len();
        let mut data = self.inputs.data().to_vec();
        data.extend_from_slice(other.inputs.data());
        let mut labels = self.labels.clone();
        labels.extend_from_slice(&other.labels);
        let mut ids = self.ids.clone();
        ids.extend_from_slice(&other.ids);
        Self::with_ids(Tensor::new(shape, data)?, labels, self.classes, ids)
    }
}

/// One-hot rows for a non-empty label list.
pub(crate) fn one_hot(labels: &[usize], classes: usize) -> Tensor {
    let mut t = Tensor::zeros(&[labels.len(), classes]);
    let d = t.data_mut();
    for (i, &y) in labels.iter().enumerate() {
        d[i * classes + y] = 1.0;
    }
    t
}
