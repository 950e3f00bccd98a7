use serde::{Deserialize, Serialize};

use super::adam::{adam_step, OptimizerState};
use crate::data::LabeledSet;
use crate::diffcore::LayerParams;
use crate::error::{Error, Result};
use crate::hybrid::{ArchSpec, HybridModel, Loss};
use crate::metrics::accuracy_of;
use crate::rng::{permutation, stream, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    #[default]
    CrossEntropy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub patience: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// Seeds both the initialisation and the batch order.
    pub seed: u64,
    pub objective: Objective,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            max_epochs: 100,
            patience: 10,
            lr: 1e-3,
            batch_size: 16,
            seed: 0,
            objective: Objective::CrossEntropy,
        }
    }
}

impl TrainConfig {
    /// Defaults for `spec`'s dataset: batch 16 and lr 1e-2 for Iris,
    /// batch 32 and lr 1e-3 for the image models.
    pub fn for_spec(spec: &ArchSpec) -> Self {
        if spec.dataset.is_image() {
            TrainConfig {
                batch_size: 32,
                ..Self::default()
            }
        } else {
            TrainConfig {
                lr: 1e-2,
                ..Self::default()
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_epochs == 0 || self.patience == 0 || self.batch_size == 0 {
            return Err(Error::config("max_epochs, patience and batch_size must be at least 1"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config(format!("learning rate {} must be positive", self.lr)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub train_loss: Vec<f64>,
    pub test_acc: Vec<f64>,
    /// 1-based epoch whose weights were restored.
    pub best_epoch: usize,
    pub best_test_acc: f64,
    pub stopped_early: bool,
}

/// Early stopping on a score to maximise, keeping the best snapshot.
/// Ties keep the earlier snapshot.
#[derive(Debug, Clone)]
pub struct EarlyStop {
    patience: usize,
    best: Option<(f64, usize, LayerParams)>,
    since_best: usize,
}

impl EarlyStop {
    pub fn new(patience: usize) -> Self {
        EarlyStop {
            patience,
            best: None,
            since_best: 0,
        }
    }

    /// Records an epoch; returns `true` when training should stop.
    pub fn observe(&mut self, epoch: usize, score: f64, params: &LayerParams) -> bool {
        match &self.best {
            Some((b, ..)) if score <= *b => self.since_best += 1,
            _ => {
                self.best = Some((score, epoch, params.clone()));
                self.since_best = 0;
            }
        }
        self.since_best >= self.patience
    }

    pub fn best_epoch(&self) -> Option<usize> {
        self.best.as_ref().map(|b| b.1)
    }

    pub fn best_score(&self) -> Option<f64> {
        self.best.as_ref().map(|b| b.0)
    }

    pub fn into_best(self) -> Option<(f64, usize, LayerParams)> {
        self.best
    }
}

pub(crate) fn batches(order: &[usize], size: usize) -> impl Iterator<Item = &[usize]> {
    order.chunks(size)
}

/// Mini-batch Adam on cross-entropy with early stopping on test accuracy.
/// Returns the model at the best epoch.
pub fn fit(
    mut model: HybridModel,
    train: &LabeledSet,
    test: &LabeledSet,
    cfg: &TrainConfig,
) -> Result<(HybridModel, TrainReport)> {
    cfg.validate()?;
    let mut rng = stream(cfg.seed, Stream::TrainOrder);
    let mut opt = OptimizerState::new();
    let mut stop = EarlyStop::new(cfg.patience);
    let mut train_loss = Vec::new();
    let mut test_acc = Vec::new();
    let mut stopped_early = false;
    for epoch in 1..=cfg.max_epochs {
        let order = permutation(train.len(), &mut rng);
        let mut total = 0.0;
        for idx in batches(&order, cfg.batch_size) {
            let batch = train.select(idx)?;
            let loss = Loss::CrossEntropy {
                targets: batch.one_hot(),
                weights: None,
            };
            let g = model.loss_grad(batch.inputs(), &loss)?;
            if !g.loss.is_finite() || !g.params.all_finite() {
                return Err(Error::Diverged {
                    epoch,
                    message: format!("loss {}", g.loss),
                });
            }
            total += g.loss * idx.len() as f64;
            adam_step(model.params_mut(), &g.params, &mut opt, cfg.lr)?;
        }
        train_loss.push(total / train.len() as f64);
        let acc = accuracy_of(&model, test)?;
        test_acc.push(acc);
        if stop.observe(epoch, acc, model.params()) {
            stopped_early = epoch < cfg.max_epochs;
            break;
        }
    }
    let (best_test_acc, best_epoch, params) = stop.into_best().expect("at least one epoch");
    model.set_params(params)?;
    Ok((
        model,
        TrainReport {
            train_loss,
            test_acc,
            best_epoch,
            best_test_acc,
            stopped_early,
        },
    ))
}

/// Fresh model seeded by `cfg.seed`, trained on `train`.
pub fn train_base(
    spec: &ArchSpec,
    train: &LabeledSet,
    test: &LabeledSet,
    cfg: &TrainConfig,
) -> Result<(HybridModel, TrainReport)> {
    fit(HybridModel::build(spec.clone(), cfg.seed)?, train, test, cfg)
}

/// The retrain reference: the base training recipe with the same
/// initialisation seed, run on the retain set only.
pub fn retrain_oracle(
    spec: &ArchSpec,
    retain: &LabeledSet,
    test: &LabeledSet,
    cfg: &TrainConfig,
) -> Result<(HybridModel, TrainReport)> {
    train_base(spec, retain, test, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::Tensor;

    #[test]
    fn early_stop_ties_keep_first() {
        let p = LayerParams::new();
        let mut s = EarlyStop::new(2);
        assert!(!s.observe(1, 0.5, &p));
        assert!(!s.observe(2, 0.5, &p));
        assert!(s.observe(3, 0.4, &p));
        assert_eq!(s.best_epoch(), Some(1));
    }

    #[test]
    fn patience_one_stops_after_two_epochs() {
        // Constant inputs: the test accuracy cannot change between epochs.
        let x = Tensor::zeros(&[6, 4]);
        let set = LabeledSet::new(x, vec![0, 1, 2, 0, 1, 2], 3).unwrap();
        let cfg = TrainConfig {
            patience: 1,
            ..TrainConfig::default()
        };
        let (_, r) = train_base(&ArchSpec::iris(), &set, &set, &cfg).unwrap();
        assert_eq!(r.test_acc.len(), 2);
        assert!(r.stopped_early);
        assert_eq!(r.best_epoch, 1);
    }
}
