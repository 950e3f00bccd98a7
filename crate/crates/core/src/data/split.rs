use serde::{Deserialize, Serialize};

use super::set::LabeledSet;
use crate::error::{Error, Result};
use crate::rng::{permutation, stream, Stream};

/// Which training samples to forget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ForgetSpec {
    /// `ceil(fraction * N)` samples drawn by seeded shuffle. With
    /// `stratified`, the draw is split across classes in proportion.
    Subset {
        fraction: f64,
        seed: u64,
        #[serde(default)]
        stratified: bool,
    },
    /// Every training sample of one class.
    FullClass { class: usize },
}

impl ForgetSpec {
    pub fn is_full_class(&self) -> bool {
        matches!(self, ForgetSpec::FullClass { .. })
    }
}

/// Retain / forget / test partition of a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitDataset {
    pub retain: LabeledSet,
    pub forget: LabeledSet,
    /// Evaluation set. For full-class forgetting it holds only the retained
    /// classes; the forgotten class's test samples move to `test_forget`.
    pub test: LabeledSet,
    pub test_forget: Option<LabeledSet>,
    pub spec: ForgetSpec,
    /// Positions in the training set, ascending.
    pub retain_idx: Vec<usize>,
    pub forget_idx: Vec<usize>,
}

impl SplitDataset {
    /// `retain ∪ forget`, retain rows first.
    pub fn train(&self) -> Result<LabeledSet> {
        self.retain.concat(&self.forget)
    }
}

/// Exactly `per_class` samples of every class, chosen by seeded shuffle.
/// Selected rows keep their original relative order.
pub fn subsample_per_class(set: &LabeledSet, per_class: usize, seed: u64) -> Result<LabeledSet> {
    if per_class == 0 {
        return Err(Error::validation("per_class must be positive"));
    }
    let mut rng = stream(seed, Stream::Subsample);
    let mut keep = Vec::with_capacity(per_class * set.classes());
    for c in 0..set.classes() {
        let pos = set.positions_of(c);
        if pos.len() < per_class {
            return Err(Error::Capacity(format!(
                "class {c} has {} samples, {per_class} requested",
                pos.len()
            )));
        }
        let order = permutation(pos.len(), &mut rng);
        keep.extend(order[..per_class].iter().map(|&i| pos[i]));
    }
    keep.sort_unstable();
    set.select(&keep)
}

/// Stratified train/test split: `round(n_c * test_fraction)` samples of each class go to test.
pub fn split(set: &LabeledSet, test_fraction: f64, seed: u64) -> Result<(LabeledSet, LabeledSet)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::validation(format!("test fraction {test_fraction} not in (0, 1)")));
    }
    let mut rng = stream(seed, Stream::Split);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for c in 0..set.classes() {
        let pos = set.positions_of(c);
        let n_test = (pos.len() as f64 * test_fraction).round() as usize;
        let order = permutation(pos.len(), &mut rng);
        test.extend(order[..n_test].iter().map(|&i| pos[i]));
        train.extend(order[n_test..].iter().map(|&i| pos[i]));
    }
    if train.is_empty() || test.is_empty() {
        return Err(Error::validation(format!(
            "split of {} samples at {test_fraction} leaves an empty partition",
            set.len()
        )));
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((set.select(&train)?, set.select(&test)?))
}

fn subset_size(fraction: f64, n: usize) -> usize {
    // guard against 0.02 * 2000 landing a ulp above 40
    ((fraction * n as f64) - 1e-9).ceil().max(0.0) as usize
}

/// Splits `train` into retain and forget sets according to `spec`.
/// `test` is kept whole for subset forgetting and split by class otherwise.
pub fn make_forget(train: &LabeledSet, test: &LabeledSet, spec: &ForgetSpec) -> Result<SplitDataset> {
    let n = train.len();
    let forget_idx: Vec<usize> = match *spec {
        ForgetSpec::Subset {
            fraction,
            seed,
            stratified,
        } => {
            if !(fraction > 0.0 && fraction < 1.0) {
                return Err(Error::validation(format!("forget fraction {fraction} not in (0, 1)")));
            }
            let size = subset_size(fraction, n);
            if size == 0 || fraction * (n as f64) < 1.0 - 1e-9 {
                return Err(Error::validation(format!(
                    "forget fraction {fraction} of {n} samples selects nothing"
                )));
            }
            let mut rng = stream(seed, Stream::Forget);
            let mut idx = if stratified {
                let mut v = Vec::new();
                for c in 0..train.classes() {
                    let pos = train.positions_of(c);
                    let take = subset_size(fraction, pos.len());
                    let order = permutation(pos.len(), &mut rng);
                    v.extend(order[..take].iter().map(|&i| pos[i]));
                }
                v
            } else {
                permutation(n, &mut rng)[..size].to_vec()
            };
            idx.sort_unstable();
            idx
        }
        ForgetSpec::FullClass { class } => {
            if class >= train.classes() {
                return Err(Error::validation(format!(
                    "class {class} outside 0..{}",
                    train.classes()
                )));
            }
            train.positions_of(class)
        }
    };
    let mut in_forget = vec![false; n];
    for &i in &forget_idx {
        in_forget[i] = true;
    }
    let retain_idx: Vec<usize> = (0..n).filter(|&i| !in_forget[i]).collect();
    if forget_idx.is_empty() || retain_idx.is_empty() {
        return Err(Error::validation("forget split leaves an empty partition"));
    }
    let (test_kept, test_forget) = match *spec {
        ForgetSpec::FullClass { class } => {
            let keep: Vec<usize> = (0..test.len()).filter(|&i| test.labels()[i] != class).collect();
            if keep.is_empty() {
                return Err(Error::validation("test set has no samples outside the forgotten class"));
            }
            let gone = test.positions_of(class);
            let held = if gone.is_empty() { None } else { Some(test.select(&gone)?) };
            (test.select(&keep)?, held)
        }
        ForgetSpec::Subset { .. } => (test.clone(), None),
    };
    Ok(SplitDataset {
        retain: train.select(&retain_idx)?,
        forget: train.select(&forget_idx)?,
        test: test_kept,
        test_forget,
        spec: spec.clone(),
        retain_idx,
        forget_idx,
    })
}
