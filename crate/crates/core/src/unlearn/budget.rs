use serde::{Deserialize, Serialize};

use super::config::UnlearnConfig;
use crate::data::{LabeledSet, SplitDataset};
use crate::diffcore::LayerParams;
use crate::error::{Error, Result};
use crate::hybrid::{HybridModel, Loss, LossGrad};
use crate::metrics::{accuracy, ProbTable};
use crate::rng::{permutation, Rng};
use crate::train::{adam_step, EarlyStop, OptimizerState};

/// State after one unlearning epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochTrace {
    pub retain_loss: f64,
    pub forget_loss: f64,
    pub forget_acc: f64,
    pub test_acc: f64,
}

fn mean_ce(model: &HybridModel, set: &LabeledSet) -> Result<(f64, f64)> {
    let p = ProbTable::of(model, set)?;
    let losses = p.losses(set.labels());
    Ok((losses.iter().sum::<f64>() / losses.len() as f64, accuracy(&p, set.labels())?))
}

pub(crate) fn trace_point(model: &HybridModel, splits: &SplitDataset) -> Result<EpochTrace> {
    let (retain_loss, _) = mean_ce(model, &splits.retain)?;
    let (forget_loss, forget_acc) = mean_ce(model, &splits.forget)?;
    let test_acc = crate::metrics::accuracy_of(model, &splits.test)?;
    Ok(EpochTrace {
        retain_loss,
        forget_loss,
        forget_acc,
        test_acc,
    })
}

/// Snapshot rule applied after the budget loop.
pub(crate) enum Select {
    /// Highest test accuracy, earliest on ties.
    BestTest,
    /// Forget accuracy closest to the target, earliest on ties.
    ClosestForget(f64),
}

/// Runs up to `cfg.max_epochs` epochs of `epoch_fn` with early stopping on
/// test accuracy, then restores the snapshot chosen by `select`. With zero
/// epochs the model comes back as given.
pub(crate) fn run_budget(
    mut model: HybridModel,
    splits: &SplitDataset,
    cfg: &UnlearnConfig,
    select: Select,
    mut epoch_fn: impl FnMut(&mut HybridModel, usize) -> Result<()>,
) -> Result<(HybridModel, Vec<EpochTrace>, Option<usize>)> {
    let mut stop = EarlyStop::new(cfg.patience);
    let mut closest: Option<(f64, usize, LayerParams)> = None;
    let mut trace = Vec::new();
    for epoch in 1..=cfg.max_epochs {
        epoch_fn(&mut model, epoch)?;
        if !model.params().all_finite() {
            return Err(Error::Diverged {
                epoch,
                message: "non-finite parameters".into(),
            });
        }
        let point = trace_point(&model, splits)?;
        if let Select::ClosestForget(target) = select {
            let d = (point.forget_acc - target).abs();
            if closest.as_ref().is_none_or(|c| d < c.0) {
                closest = Some((d, epoch, model.params().clone()));
            }
        }
        let done = stop.observe(epoch, point.test_acc, model.params());
        trace.push(point);
        if done {
            break;
        }
    }
    let chosen = match select {
        Select::BestTest => stop.into_best().map(|(_, e, p)| (e, p)),
        Select::ClosestForget(_) => closest.map(|(_, e, p)| (e, p)),
    };
    let best = match chosen {
        Some((epoch, params)) => {
            model.set_params(params)?;
            Some(epoch)
        }
        None => None,
    };
    Ok((model, trace, best))
}

/// Optimizer plus the parameter subset it may touch.
pub(crate) struct Stepper {
    pub opt: OptimizerState,
    pub lr: f64,
    pub trainable: Option<Vec<String>>,
}

impl Stepper {
    pub fn new(lr: f64, trainable: Option<Vec<String>>) -> Self {
        Stepper {
            opt: OptimizerState::new(),
            lr,
            trainable,
        }
    }

    pub fn step(&mut self, model: &mut HybridModel, mut grads: LayerParams, epoch: usize) -> Result<()> {
        if !grads.all_finite() {
            return Err(Error::Diverged {
                epoch,
                message: "non-finite gradient".into(),
            });
        }
        if let Some(names) = &self.trainable {
            grads.retain(|n| names.iter().any(|t| t == n));
        }
        adam_step(model.params_mut(), &grads, &mut self.opt, self.lr)
    }
}

/// Cross-entropy gradient on a labeled batch.
pub(crate) fn ce_grad(model: &HybridModel, batch: &LabeledSet) -> Result<LossGrad> {
    model.loss_grad(
        batch.inputs(),
        &Loss::CrossEntropy {
            targets: batch.one_hot(),
            weights: None,
        },
    )
}

/// Per-epoch batch positions for one set.
pub(crate) fn epoch_batches(n: usize, batch: usize, rng: &mut Rng) -> Vec<Vec<usize>> {
    let order = permutation(n, rng);
    order.chunks(batch).map(|c| c.to_vec()).collect()
}
