//! Utility, forgetting and similarity-to-oracle scores.

mod mia;
mod report;

pub use mia::{mia_from_losses, mia_score};
pub use report::{evaluate, uqi, EvalOptions, KlDirection, MetricsReport, UqiInputs, UQI_DELTA, UQI_NOTE};

use crate::data::LabeledSet;
use crate::diffcore::ops::{kl, PROB_EPS};
use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::hybrid::HybridModel;
use crate::qsim::{fidelity, trace_distance};

/// Probability rows of one model on one set.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbTable(Tensor);

impl ProbTable {
    /// Wraps `[N, K]` rows, each summing to 1 within 1e-9.
    pub fn new(t: Tensor) -> Result<Self> {
        if t.rank() != 2 {
            return Err(Error::dim(format!("probability table must be [N,K], got {:?}", t.shape())));
        }
        for (i, row) in t.data().chunks(t.shape()[1]).enumerate() {
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > 1e-9 || row.iter().any(|v| !(*v >= 0.0)) {
                return Err(Error::validation(format!("row {i} is not a distribution (sum {s})")));
            }
        }
        Ok(ProbTable(t))
    }

    pub fn of(model: &HybridModel, set: &LabeledSet) -> Result<Self> {
        Self::new(model.predict(set.inputs())?)
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.0.shape()[1]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.0.row(i)
    }

    /// Predicted class of every row.
    pub fn predictions(&self) -> Vec<usize> {
        (0..self.len()).map(|i| argmax(self.row(i))).collect()
    }

    /// Per-sample cross-entropy of the true labels.
    pub fn losses(&self, labels: &[usize]) -> Vec<f64> {
        labels
            .iter()
            .enumerate()
            .map(|(i, &y)| -self.row(i)[y].max(PROB_EPS).ln())
            .collect()
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn check_labels(p: &ProbTable, labels: &[usize]) -> Result<()> {
    if labels.is_empty() {
        return Err(Error::validation("empty set"));
    }
    if p.len() != labels.len() {
        return Err(Error::dim(format!("{} rows vs {} labels", p.len(), labels.len())));
    }
    Ok(())
}

pub fn accuracy(p: &ProbTable, labels: &[usize]) -> Result<f64> {
    check_labels(p, labels)?;
    let hits = p.predictions().iter().zip(labels).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Unweighted mean of per-class F1. Classes absent from both predictions
/// and labels count as 0.
pub fn macro_f1(p: &ProbTable, labels: &[usize]) -> Result<f64> {
    check_labels(p, labels)?;
    let k = p.classes();
    let mut tp = vec![0usize; k];
    let mut pred = vec![0usize; k];
    let mut truth = vec![0usize; k];
    for (yh, &y) in p.predictions().into_iter().zip(labels) {
        pred[yh] += 1;
        truth[y] += 1;
        if yh == y {
            tp[y] += 1;
        }
    }
    let total: f64 = (0..k)
        .map(|c| {
            let denom = pred[c] + truth[c];
            if denom == 0 {
                0.0
            } else {
                2.0 * tp[c] as f64 / denom as f64
            }
        })
        .sum();
    Ok(total / k as f64)
}

pub fn accuracy_of(model: &HybridModel, set: &LabeledSet) -> Result<f64> {
    accuracy(&ProbTable::of(model, set)?, set.labels())
}

fn check_aligned(p: &ProbTable, q: &ProbTable) -> Result<()> {
    if p.0.shape() != q.0.shape() {
        return Err(Error::dim(format!(
            "tables {:?} and {:?} are not aligned",
            p.0.shape(),
            q.0.shape()
        )));
    }
    Ok(())
}

/// `(mean KL(p || q), mean JS(p, q))`, natural log, clamped at 1e-10.
pub fn divergences(p: &ProbTable, q: &ProbTable) -> Result<(f64, f64)> {
    check_aligned(p, q)?;
    let n = p.len() as f64;
    let mut kl_sum = 0.0;
    let mut js_sum = 0.0;
    let mut m = vec![0.0; p.classes()];
    for i in 0..p.len() {
        let (a, b) = (p.row(i), q.row(i));
        for (mk, (x, y)) in m.iter_mut().zip(a.iter().zip(b)) {
            *mk = 0.5 * (x + y);
        }
        kl_sum += kl(a, b).max(0.0);
        js_sum += (0.5 * kl(a, &m) + 0.5 * kl(b, &m)).clamp(0.0, std::f64::consts::LN_2);
    }
    Ok((kl_sum / n, js_sum / n))
}

/// Fraction of rows with the same argmax.
pub fn agreement(p: &ProbTable, q: &ProbTable) -> Result<f64> {
    check_aligned(p, q)?;
    let same = p
        .predictions()
        .iter()
        .zip(q.predictions())
        .filter(|(a, b)| **a == *b)
        .count();
    Ok(same as f64 / p.len() as f64)
}

/// Mean fidelity and trace distance between the VQC output states of two models.
pub fn state_distance(a: &HybridModel, b: &HybridModel, set: &LabeledSet) -> Result<(f64, f64)> {
    if a.spec() != b.spec() {
        return Err(Error::config("state distance needs two models of the same architecture"));
    }
    let (_, sa) = a.predict_with_states(set.inputs())?;
    let (_, sb) = b.predict_with_states(set.inputs())?;
    let mut f = 0.0;
    let mut t = 0.0;
    for (x, y) in sa.iter().zip(&sb) {
        f += fidelity(x, y)?;
        t += trace_distance(x, y)?;
    }
    let n = sa.len() as f64;
    Ok(((f / n).clamp(0.0, 1.0), (t / n).clamp(0.0, 1.0)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(rows: &[Vec<f64>]) -> ProbTable {
        ProbTable::new(Tensor::from_rows(rows).unwrap()).unwrap()
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(&[0.4, 0.4, 0.2]), 0);
        assert_eq!(argmax(&[0.2, 0.4, 0.4]), 1);
    }

    #[test]
    fn f1_hand_worked() {
        // truth 0 0 1 1 2 2, predicted 0 1 1 1 0 2
        let p = table(&[
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![1.0, 0.0, 0.0],
            vec![0.0, 0.0, 1.0],
        ]);
        let y = [0, 0, 1, 1, 2, 2];
        // class 0: tp 1, pred 2, true 2 -> 0.5; class 1: tp 2, pred 3, true 2 -> 0.8;
        // class 2: tp 1, pred 1, true 2 -> 2/3
        let want = (0.5 + 0.8 + 2.0 / 3.0) / 3.0;
        assert!((macro_f1(&p, &y).unwrap() - want).abs() < 1e-15);
        assert!((accuracy(&p, &y).unwrap() - 4.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn js_of_disjoint_is_ln2() {
        let p = table(&[vec![1.0, 0.0]]);
        let q = table(&[vec![0.0, 1.0]]);
        let (_, js) = divergences(&p, &q).unwrap();
        assert!((js - std::f64::consts::LN_2).abs() < 1e-12);
        assert_eq!(divergences(&p, &p).unwrap(), (0.0, 0.0));
    }

    #[test]
    fn permuted_argmax_disagrees() {
        let p = table(&[vec![0.7, 0.2, 0.1], vec![0.1, 0.7, 0.2], vec![0.2, 0.1, 0.7]]);
        let q = table(&[vec![0.2, 0.7, 0.1], vec![0.1, 0.2, 0.7], vec![0.7, 0.1, 0.2]]);
        assert_eq!(agreement(&p, &q).unwrap(), 0.0);
        assert_eq!(agreement(&p, &p).unwrap(), 1.0);
    }
}
