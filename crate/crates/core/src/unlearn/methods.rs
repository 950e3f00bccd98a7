use std::time::Instant;

use rand::{Rng as _, RngCore};
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::budget::{ce_grad, epoch_batches, run_budget, EpochTrace, Select, Stepper};
use super::config::{MethodId, UnlearnConfig};
use crate::data::{LabeledSet, SplitDataset};
use crate::diffcore::{LayerParams, Tensor};
use crate::error::{Error, Result};
use crate::hybrid::{HybridModel, Loss};
use crate::metrics::{accuracy_of, ProbTable};
use crate::rng::{stream, Rng, Stream};

/// Output of one unlearning run.
#[derive(Debug, Clone)]
pub struct UnlearnResult {
    pub method: MethodId,
    /// Report label, e.g. `EU-k1`.
    pub label: String,
    pub model: HybridModel,
    pub trace: Vec<EpochTrace>,
    /// 1-based epoch whose weights were restored; `None` when no epoch ran.
    pub best_epoch: Option<usize>,
    pub wall_s: f64,
    /// Hyperparameters the run used.
    pub config: UnlearnConfig,
}

/// Rows with 0 at the true class and `1/(K-1)` elsewhere. The last
/// off-class entry absorbs rounding so every row sums to exactly 1.
pub fn complement_labels(labels: &[usize], classes: usize) -> Result<Tensor> {
    if classes < 2 {
        return Err(Error::validation(format!("complement labels need K >= 2, got {classes}")));
    }
    if labels.is_empty() {
        return Err(Error::validation("no labels"));
    }
    let v = 1.0 / (classes - 1) as f64;
    let mut data = Vec::with_capacity(labels.len() * classes);
    for &y in labels {
        if y >= classes {
            return Err(Error::validation(format!("label {y} outside 0..{classes}")));
        }
        let last = if y == classes - 1 { classes - 2 } else { classes - 1 };
        let mut row = vec![v; classes];
        row[y] = 0.0;
        let others: f64 = (0..classes).filter(|&c| c != y && c != last).map(|c| row[c]).sum();
        row[last] = 1.0 - others;
        data.extend(row);
    }
    Tensor::new(vec![labels.len(), classes], data)
}

/// `[B, K]` rows of `1/K`.
pub fn uniform_target(rows: usize, classes: usize) -> Tensor {
    Tensor::full(&[rows, classes], 1.0 / classes as f64)
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `x + eps * sign(grad_x KL(f(x) || u))`, clamped to `[0, 1]` for images.
pub fn fgsm_uniform(model: &HybridModel, x: &Tensor, eps: f64) -> Result<Tensor> {
    let k = model.spec().classes;
    let target = uniform_target(x.rows(), k);
    let g = model.loss_grad(x, &Loss::Kl { target })?;
    let image = model.spec().dataset.is_image();
    let data = x
        .data()
        .iter()
        .zip(g.input.data())
        .map(|(&xi, &gi)| {
            let v = xi + eps * sign(gi);
            if image {
                v.clamp(0.0, 1.0)
            } else {
                v
            }
        })
        .collect();
    Tensor::new(x.shape().to_vec(), data)
}

/// Copy of `model` with the first `k` layer groups replaced by a fresh
/// initialisation drawn from `seed`.
pub fn reinit_groups(model: &HybridModel, k: usize, seed: u64) -> Result<HybridModel> {
    let fresh_seed = stream(seed, Stream::Reinit).next_u64();
    let fresh = HybridModel::build(model.spec().clone(), fresh_seed)?;
    let mut params = model.params().clone();
    for name in model.group_names(k) {
        params.insert(name.clone(), fresh.params().require(&name)?.clone());
    }
    let mut out = model.clone();
    out.set_params(params)?;
    Ok(out)
}

fn add_noise(grads: &mut LayerParams, sigma: f64, rng: &mut Rng) {
    for (_, t) in grads.iter_mut() {
        for v in t.data_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *v += sigma * z;
        }
    }
}

struct Rngs {
    retain: Rng,
    forget: Rng,
}

impl Rngs {
    fn new(seed: u64) -> Self {
        Rngs {
            retain: stream(seed, Stream::RetainOrder),
            forget: stream(seed, Stream::ForgetOrder),
        }
    }
}

/// One pass over the retain set with cross-entropy.
fn retain_epoch(
    model: &mut HybridModel,
    retain: &LabeledSet,
    cfg: &UnlearnConfig,
    stepper: &mut Stepper,
    rng: &mut Rng,
    mut noise: Option<(&mut Rng, f64)>,
    epoch: usize,
) -> Result<()> {
    for idx in epoch_batches(retain.len(), cfg.batch_size, rng) {
        let mut g = ce_grad(model, &retain.select(&idx)?)?.params;
        if let Some((nrng, sigma)) = noise.as_mut() {
            add_noise(&mut g, *sigma, nrng);
        }
        stepper.step(model, g, epoch)?;
    }
    Ok(())
}

fn finetune(
    model: HybridModel,
    splits: &SplitDataset,
    cfg: &UnlearnConfig,
    trainable: Option<Vec<String>>,
    sigma: f64,
) -> Result<(HybridModel, Vec<EpochTrace>, Option<usize>)> {
    let mut rngs = Rngs::new(cfg.seed);
    let mut noise_rng = stream(cfg.seed, Stream::GradNoise);
    let mut stepper = Stepper::new(cfg.lr, trainable);
    run_budget(model, splits, cfg, Select::BestTest, |m, epoch| {
        let noise = (sigma > 0.0).then_some((&mut noise_rng, sigma));
        retain_epoch(m, &splits.retain, cfg, &mut stepper, &mut rngs.retain, noise, epoch)
    })
}

/// Plain retain-only fine-tuning of every parameter under the budget.
pub fn retain_finetune(model: &HybridModel, splits: &SplitDataset, cfg: &UnlearnConfig) -> Result<UnlearnResult> {
    let start = Instant::now();
    let (m, trace, best) = finetune(model.clone(), splits, cfg, None, 0.0)?;
    Ok(UnlearnResult {
        method: MethodId::Certified,
        label: "retain-finetune".into(),
        model: m,
        trace,
        best_epoch: best,
        wall_s: start.elapsed().as_secs_f64(),
        config: cfg.clone(),
    })
}

fn ga(model: HybridModel, splits: &SplitDataset, cfg: &UnlearnConfig) -> Result<(HybridModel, Vec<EpochTrace>, Option<usize>)> {
    let mut rngs = Rngs::new(cfg.seed);
    let mut stepper = Stepper::new(cfg.lr, None);
    let forget = &splits.forget;
    run_budget(model, splits, cfg, Select::BestTest, |m, epoch| {
        for idx in epoch_batches(forget.len(), cfg.batch_size, &mut rngs.forget) {
            let batch = forget.select(&idx)?;
            let (p, cache) = m.forward(batch.inputs())?;
            let losses = ProbTable::new(p)?.losses(batch.labels());
            // ascend only on samples whose loss is still below the clip
            let weights = losses.iter().map(|&l| if l < 10.0 { -1.0 } else { 0.0 }).collect();
            let g = m.loss_backward(
                cache,
                &Loss::CrossEntropy {
                    targets: batch.one_hot(),
                    weights: Some(weights),
                },
            )?;
            stepper.step(m, g.params, epoch)?;
        }
        Ok(())
    })
}

fn fisher_diagonal(model: &HybridModel, retain: &LabeledSet) -> Result<LayerParams> {
    let per_sample: Vec<LayerParams> = (0..retain.len())
        .into_par_iter()
        .map(|i| Ok(ce_grad(model, &retain.select(&[i])?)?.params))
        .collect::<Result<_>>()?;
    let mut f = model.params().zeros_like();
    for g in &per_sample {
        for (name, t) in f.iter_mut() {
            let gi = g.require(name)?;
            for (a, b) in t.data_mut().iter_mut().zip(gi.data()) {
                *a += b * b;
            }
        }
    }
    let n = retain.len() as f64;
    for (_, t) in f.iter_mut() {
        for v in t.data_mut() {
            *v /= n;
        }
    }
    Ok(f)
}

fn fisher(model: HybridModel, splits: &SplitDataset, cfg: &UnlearnConfig) -> Result<(HybridModel, Vec<EpochTrace>, Option<usize>)> {
    let mut rngs = Rngs::new(cfg.seed);
    let mut noise_rng = stream(cfg.seed, Stream::FisherNoise);
    let mut stepper = Stepper::new(cfg.lr, None);
    run_budget(model, splits, cfg, Select::BestTest, |m, epoch| {
        if epoch == 1 {
            let f = fisher_diagonal(m, &splits.retain)?;
            let params = m.params_mut();
            for (name, t) in params.iter_mut() {
                let fi = f.require(name)?;
                for (v, &fv) in t.data_mut().iter_mut().zip(fi.data()) {
                    let var = (cfg.lambda_fisher / (fv + 1e-8)).min(cfg.fisher_var_cap);
                    let z: f64 = noise_rng.sample(StandardNormal);
                    *v += var.sqrt() * z;
                }
            }
            Ok(())
        } else {
            retain_epoch(m, &splits.retain, cfg, &mut stepper, &mut rngs.retain, None, epoch)
        }
    })
}

fn neggrad_plus(model: HybridModel, splits: &SplitDataset, cfg: &UnlearnConfig) -> Result<(HybridModel, Vec<EpochTrace>, Option<usize>)> {
    let mut rngs = Rngs::new(cfg.seed);
    let mut stepper = Stepper::new(cfg.lr, None);
    let (retain, forget) = (&splits.retain, &splits.forget);
    run_budget(model, splits, cfg, Select::BestTest, |m, epoch| {
        let rb = epoch_batches(retain.len(), cfg.batch_size, &mut rngs.retain);
        let fb = epoch_batches(forget.len(), cfg.batch_size, &mut rngs.forget);
        for (i, idx) in rb.iter().enumerate() {
            let gr = ce_grad(m, &retain.select(idx)?)?.params;
            let gf = ce_grad(m, &forget.select(&fb[i % fb.len()])?)?.params;
            let mut g = gr.zeros_like();
            g.add_scaled(&gr, cfg.alpha)?;
            g.add_scaled(&gf, -(1.0 - cfg.alpha))?;
            stepper.step(m, g, epoch)?;
        }
        Ok(())
    })
}

fn scrub(
    model: HybridModel,
    splits: &SplitDataset,
    cfg: &UnlearnConfig,
    select: Select,
) -> Result<(HybridModel, Vec<EpochTrace>, Option<usize>)> {
    let teacher = model.clone();
    let mut rngs = Rngs::new(cfg.seed);
    let mut stepper = Stepper::new(cfg.lr, None);
    let (retain, forget) = (&splits.retain, &splits.forget);
    run_budget(model, splits, cfg, select, |m, epoch| {
        if epoch <= cfg.scrub_max_steps {
            for idx in epoch_batches(forget.len(), cfg.batch_size, &mut rngs.forget) {
                let batch = forget.select(&idx)?;
                let target = teacher.predict(batch.inputs())?;
                let loss = Loss::Sum(vec![(-1.0, Loss::Kl { target })]);
                let g = m.loss_grad(batch.inputs(), &loss)?;
                stepper.step(m, g.params, epoch)?;
            }
        }
        for idx in epoch_batches(retain.len(), cfg.batch_size, &mut rngs.retain) {
            let batch = retain.select(&idx)?;
            let target = teacher.predict(batch.inputs())?;
            let loss = Loss::Sum(vec![
                (1.0, Loss::Kl { target }),
                (
                    1.0,
                    Loss::CrossEntropy {
                        targets: batch.one_hot(),
                        weights: None,
                    },
                ),
            ]);
            let g = m.loss_grad(batch.inputs(), &loss)?;
            stepper.step(m, g.params, epoch)?;
        }
        Ok(())
    })
}

fn q_mul(model: HybridModel, splits: &SplitDataset, cfg: &UnlearnConfig) -> Result<(HybridModel, Vec<EpochTrace>, Option<usize>)> {
    let k = model.spec().classes;
    let mut relabel = stream(cfg.seed, Stream::Relabel);
    let wrong: Vec<usize> = splits
        .forget
        .labels()
        .iter()
        .map(|&y| {
            let r = relabel.random_range(0..k - 1);
            if r >= y {
                r + 1
            } else {
                r
            }
        })
        .collect();
    let pool = splits.forget.relabeled(wrong)?.concat(&splits.retain)?;
    let mut rngs = Rngs::new(cfg.seed);
    let mut stepper = Stepper::new(cfg.lr, None);
    run_budget(model, splits, cfg, Select::BestTest, |m, epoch| {
        retain_epoch(m, &pool, cfg, &mut stepper, &mut rngs.retain, None, epoch)
    })
}

/// Alternates forget-side steps from `forget_loss` with retain cross-entropy
/// steps, one each, until both sets have been seen once.
fn interleaved(
    model: HybridModel,
    splits: &SplitDataset,
    cfg: &UnlearnConfig,
    mut forget_loss: impl FnMut(&HybridModel, &LabeledSet) -> Result<(Tensor, Loss)>,
) -> Result<(HybridModel, Vec<EpochTrace>, Option<usize>)> {
    let mut rngs = Rngs::new(cfg.seed);
    let mut stepper = Stepper::new(cfg.lr, None);
    let (retain, forget) = (&splits.retain, &splits.forget);
    run_budget(model, splits, cfg, Select::BestTest, |m, epoch| {
        let rb = epoch_batches(retain.len(), cfg.batch_size, &mut rngs.retain);
        let fb = epoch_batches(forget.len(), cfg.batch_size, &mut rngs.forget);
        for i in 0..rb.len().max(fb.len()) {
            let fbatch = forget.select(&fb[i % fb.len()])?;
            let (x, loss) = forget_loss(m, &fbatch)?;
            let g = m.loss_grad(&x, &loss)?;
            stepper.step(m, g.params, epoch)?;
            let g = ce_grad(m, &retain.select(&rb[i % rb.len()])?)?;
            stepper.step(m, g.params, epoch)?;
        }
        Ok(())
    })
}

fn lca(model: HybridModel, splits: &SplitDataset, cfg: &UnlearnConfig) -> Result<(HybridModel, Vec<EpochTrace>, Option<usize>)> {
    let k = model.spec().classes;
    interleaved(model, splits, cfg, |_, batch| {
        let comp = complement_labels(batch.labels(), k)?;
        let loss = if cfg.lca_reversed {
            Loss::CrossEntropy {
                targets: comp,
                weights: None,
            }
        } else {
            Loss::Kl { target: comp }
        };
        Ok((batch.inputs().clone(), loss))
    })
}

fn adv_uniform(model: HybridModel, splits: &SplitDataset, cfg: &UnlearnConfig) -> Result<(HybridModel, Vec<EpochTrace>, Option<usize>)> {
    let k = model.spec().classes;
    interleaved(model, splits, cfg, |m, batch| {
        let x_adv = fgsm_uniform(m, batch.inputs(), cfg.eps_adv)?;
        let target = uniform_target(batch.len(), k);
        Ok((x_adv, Loss::Kl { target }))
    })
}

/// Runs `method` from the trained model `original`.
pub fn run_method(
    method: MethodId,
    original: &HybridModel,
    splits: &SplitDataset,
    cfg: &UnlearnConfig,
) -> Result<UnlearnResult> {
    cfg.validate()?;
    let groups = original.layer_groups().len();
    if matches!(method, MethodId::CfK | MethodId::EuK) && cfg.k > groups {
        return Err(Error::config(format!("k = {} but the model has {groups} layer groups", cfg.k)));
    }
    let start = Instant::now();
    let model = original.clone();
    let (m, trace, best) = match method {
        MethodId::Ga => ga(model, splits, cfg)?,
        MethodId::Fisher => fisher(model, splits, cfg)?,
        MethodId::NegGradPlus => neggrad_plus(model, splits, cfg)?,
        MethodId::CfK => {
            let names = model.group_names(cfg.k);
            finetune(model, splits, cfg, Some(names), 0.0)?
        }
        MethodId::EuK => {
            let names = model.group_names(cfg.k);
            let fresh = reinit_groups(&model, cfg.k, cfg.seed)?;
            finetune(fresh, splits, cfg, Some(names), 0.0)?
        }
        MethodId::Scrub => scrub(model, splits, cfg, Select::BestTest)?,
        MethodId::ScrubR => {
            let target = if splits.spec.is_full_class() {
                0.0
            } else {
                accuracy_of(original, &splits.test)?
            };
            scrub(model, splits, cfg, Select::ClosestForget(target))?
        }
        MethodId::Certified => finetune(model, splits, cfg, None, cfg.sigma_noise)?,
        MethodId::QMul => q_mul(model, splits, cfg)?,
        MethodId::Lca => lca(model, splits, cfg)?,
        MethodId::AdvUniform => adv_uniform(model, splits, cfg)?,
    };
    Ok(UnlearnResult {
        method,
        label: method.label(cfg.k),
        model: m,
        trace,
        best_epoch: best,
        wall_s: start.elapsed().as_secs_f64(),
        config: cfg.clone(),
    })
}
