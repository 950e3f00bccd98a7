use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, MethodPlan};
use crate::data::{load_idx_pair, load_iris, make_forget, read_checked, split, subsample_per_class, LabeledSet, SplitDataset};
use crate::error::{Error, Result};
use crate::hybrid::{ArchSpec, DatasetTag, HybridModel};
use crate::metrics::{accuracy_of, evaluate, EvalOptions, MetricsReport};
use crate::train::{retrain_oracle, train_base, TrainReport};
use crate::unlearn::{run_method, MAX_UNLEARN_EPOCHS};

/// Loads the whole dataset named by the config.
pub fn load_pool(cfg: &ExperimentConfig) -> Result<LabeledSet> {
    let d = &cfg.data;
    match d.dataset {
        DatasetTag::Iris => {
            let path = cfg.resolve(d.csv.as_deref().unwrap_or_default());
            let bytes = read_checked(&path, d.csv_sha256.as_deref())?;
            let text = String::from_utf8(bytes).map_err(|_| Error::config(format!("{} is not UTF-8", path.display())))?;
            load_iris(&text)
        }
        _ => load_idx_pair(
            &cfg.resolve(d.images.as_deref().unwrap_or_default()),
            &cfg.resolve(d.labels.as_deref().unwrap_or_default()),
            cfg.arch_spec()?.classes,
            (d.images_sha256.as_deref(), d.labels_sha256.as_deref()),
        ),
    }
}

/// Train/test pool and forget split for one seed.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub spec: ArchSpec,
    pub train: LabeledSet,
    pub test: LabeledSet,
    pub splits: SplitDataset,
}

pub fn prepare(cfg: &ExperimentConfig, pool: &LabeledSet, seed: u64) -> Result<Prepared> {
    let sub = match cfg.data.per_class {
        Some(n) => subsample_per_class(pool, n, seed)?,
        None => pool.clone(),
    };
    let (train, test) = split(&sub, cfg.data.test_fraction, seed)?;
    let splits = make_forget(&train, &test, &cfg.forget_spec(seed)?)?;
    Ok(Prepared {
        spec: cfg.arch_spec()?,
        train,
        test,
        splits,
    })
}

/// Base model (trained on retain ∪ forget) and retrain oracle for one seed.
pub fn train_pair(cfg: &ExperimentConfig, p: &Prepared, seed: u64) -> Result<((HybridModel, TrainReport), (HybridModel, TrainReport))> {
    let tc = cfg.train_config(seed)?;
    let (base, oracle) = rayon::join(
        || train_base(&p.spec, &p.train, &p.test, &tc),
        || retrain_oracle(&p.spec, &p.splits.retain, &p.splits.test, &tc),
    );
    Ok((base?, oracle?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub method: String,
    /// Seed, or `"mean"` for aggregate rows.
    pub seed: String,
    pub report: MetricsReport,
    pub wall_s: f64,
    /// Unlearning epochs run.
    pub epochs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRecord {
    pub seed: u64,
    pub base: TrainReport,
    pub oracle: TrainReport,
    pub base_acc_forget: f64,
    pub oracle_acc_forget: f64,
    pub n_retain: usize,
    pub n_forget: usize,
    pub n_test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellError {
    pub method: String,
    pub seed: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config_hash: String,
    pub rows: Vec<Row>,
    pub means: Vec<Row>,
    pub seeds: Vec<SeedRecord>,
    pub errors: Vec<CellError>,
}

fn run_cell(base: &HybridModel, oracle: &HybridModel, p: &Prepared, plan: &MethodPlan, seed: u64, cfg: &ExperimentConfig) -> Result<Row> {
    let mut ucfg = plan.config.clone();
    ucfg.seed = seed;
    let start = Instant::now();
    let res = run_method(plan.method, base, &p.splits, &ucfg)?;
    if res.trace.len() > MAX_UNLEARN_EPOCHS {
        return Err(Error::Contract(format!("{} ran {} epochs", res.label, res.trace.len())));
    }
    let report = evaluate(
        base,
        &res.model,
        oracle,
        &p.splits,
        &EvalOptions {
            kl_direction: cfg.metrics.kl_direction,
            seed,
        },
    )?;
    Ok(Row {
        method: res.label,
        seed: seed.to_string(),
        report,
        wall_s: start.elapsed().as_secs_f64(),
        epochs: res.trace.len(),
    })
}

fn mean_rows(plans: &[MethodPlan], rows: &[Row]) -> Vec<Row> {
    plans
        .iter()
        .filter_map(|plan| {
            let label = plan.label();
            let mine: Vec<&Row> = rows.iter().filter(|r| r.method == label).collect();
            if mine.is_empty() {
                return None;
            }
            let n = mine.len() as f64;
            let avg = |f: fn(&MetricsReport) -> f64| mine.iter().map(|r| f(&r.report)).sum::<f64>() / n;
            let mia = mine
                .iter()
                .map(|r| r.report.mia)
                .collect::<Option<Vec<f64>>>()
                .map(|v| v.iter().sum::<f64>() / n);
            Some(Row {
                method: label,
                seed: "mean".into(),
                report: MetricsReport {
                    acc_retain: avg(|r| r.acc_retain),
                    acc_test: avg(|r| r.acc_test),
                    f1_test: avg(|r| r.f1_test),
                    acc_forget: avg(|r| r.acc_forget),
                    uqi: avg(|r| r.uqi),
                    agree_test: avg(|r| r.agree_test),
                    mia,
                    kl_retain: avg(|r| r.kl_retain),
                    js_retain: avg(|r| r.js_retain),
                    kl_test: avg(|r| r.kl_test),
                    js_test: avg(|r| r.js_test),
                    fidelity_mean: avg(|r| r.fidelity_mean),
                },
                wall_s: mine.iter().map(|r| r.wall_s).sum::<f64>() / n,
                epochs: mine.iter().map(|r| r.epochs).max().unwrap_or(0),
            })
        })
        .collect()
}

fn worker_pool() -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var("QUNL_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .map_err(|_| Error::config(format!("QUNL_THREADS={v:?} is not a thread count")))?;
        b = b.num_threads(n);
    }
    b.build().map_err(|e| Error::config(format!("cannot build worker pool: {e}")))
}

/// The full pipeline for every seed: train base and oracle once, run each
/// method from the shared base, evaluate. Failing cells are recorded and
/// skipped.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunRecord> {
    let plans = cfg.method_plans()?;
    let pool = load_pool(cfg)?;
    let workers = worker_pool()?;
    let mut rows = Vec::new();
    let mut seeds = Vec::new();
    let mut errors = Vec::new();
    for &seed in &cfg.experiment.seeds {
        let setup = prepare(cfg, &pool, seed).and_then(|p| {
            let pair = workers.install(|| train_pair(cfg, &p, seed))?;
            Ok((p, pair))
        });
        let (p, ((base, base_report), (oracle, oracle_report))) = match setup {
            Ok(v) => v,
            Err(e) => {
                errors.push(CellError {
                    method: "*".into(),
                    seed: seed.to_string(),
                    message: e.to_string(),
                });
                continue;
            }
        };
        seeds.push(SeedRecord {
            seed,
            base_acc_forget: accuracy_of(&base, &p.splits.forget)?,
            oracle_acc_forget: accuracy_of(&oracle, &p.splits.forget)?,
            base: base_report,
            oracle: oracle_report,
            n_retain: p.splits.retain.len(),
            n_forget: p.splits.forget.len(),
            n_test: p.splits.test.len(),
        });
        let cells: Vec<Result<Row>> = workers.install(|| {
            plans
                .par_iter()
                .map(|plan| run_cell(&base, &oracle, &p, plan, seed, cfg))
                .collect()
        });
        for (plan, cell) in plans.iter().zip(cells) {
            match cell {
                Ok(r) => rows.push(r),
                Err(e) => errors.push(CellError {
                    method: plan.label(),
                    seed: seed.to_string(),
                    message: e.to_string(),
                }),
            }
        }
    }
    Ok(RunRecord {
        config_hash: cfg.hash(),
        means: mean_rows(&plans, &rows),
        rows,
        seeds,
        errors,
    })
}
