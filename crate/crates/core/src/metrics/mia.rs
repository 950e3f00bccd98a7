use super::ProbTable;
use crate::data::LabeledSet;
use crate::error::{Error, Result};
use crate::hybrid::HybridModel;
use crate::rng::{permutation, stream, Stream};

fn count_below(sorted: &[f64], tau: f64) -> usize {
    sorted.partition_point(|&v| v < tau)
}

/// Loss-threshold membership score.
///
/// A sample is called a member when its loss is below `tau`. Candidate
/// thresholds are the distinct calibration losses plus `+inf`. Balanced
/// accuracy is computed for each; every candidate within one binomial
/// standard error (`sqrt(1/n_m + 1/n_n)`) of the best is treated as
/// optimal and the median of that set is used. With separable populations
/// the set is narrow and this is the argmax; with indistinguishable ones it
/// spans the overlap and the threshold lands near the middle instead of on
/// a noise spike. Returns the fraction of `forget` losses called members.
pub fn mia_from_losses(members: &[f64], nonmembers: &[f64], forget: &[f64]) -> Result<f64> {
    if members.is_empty() || nonmembers.is_empty() || forget.is_empty() {
        return Err(Error::validation("membership score needs non-empty loss sets"));
    }
    if members.iter().chain(nonmembers).chain(forget).any(|v| v.is_nan()) {
        return Err(Error::validation("NaN loss"));
    }
    let mut m = members.to_vec();
    let mut n = nonmembers.to_vec();
    m.sort_by(f64::total_cmp);
    n.sort_by(f64::total_cmp);
    let mut cands: Vec<f64> = m.iter().chain(&n).copied().collect();
    cands.sort_by(f64::total_cmp);
    cands.dedup();
    cands.push(f64::INFINITY);
    let (nm, nn) = (m.len() as f64, n.len() as f64);
    let ba: Vec<f64> = cands
        .iter()
        .map(|&t| {
            let tpr = count_below(&m, t) as f64 / nm;
            let tnr = 1.0 - count_below(&n, t) as f64 / nn;
            0.5 * (tpr + tnr)
        })
        .collect();
    let best = ba.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let tol = (1.0 / nm + 1.0 / nn).sqrt();
    let near: Vec<f64> = cands
        .iter()
        .zip(&ba)
        .filter(|(_, &b)| b >= best - tol)
        .map(|(&t, _)| t)
        .collect();
    let tau = near[near.len() / 2];
    let hits = forget.iter().filter(|&&v| v < tau).count();
    Ok(hits as f64 / forget.len() as f64)
}

/// Membership score of `forget` under `model`, calibrated on seeded halves
/// of `retain` (members) and `test` (non-members). Lower is better.
pub fn mia_score(
    model: &HybridModel,
    retain: &LabeledSet,
    forget: &LabeledSet,
    test: &LabeledSet,
    seed: u64,
) -> Result<f64> {
    let mut rng = stream(seed, Stream::MiaHalves);
    let half = |set: &LabeledSet, rng: &mut _| -> Result<Vec<f64>> {
        let order = permutation(set.len(), rng);
        let mut pick = order[..(set.len() / 2).max(1)].to_vec();
        pick.sort_unstable();
        let sub = set.select(&pick)?;
        Ok(ProbTable::of(model, &sub)?.losses(sub.labels()))
    };
    let nonmembers = half(test, &mut rng)?;
    let members = half(retain, &mut rng)?;
    let f = ProbTable::of(model, forget)?.losses(forget.labels());
    mia_from_losses(&members, &nonmembers, &f)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separable_populations() {
        let m: Vec<f64> = (0..50).map(|i| 0.01 * i as f64).collect();
        let n: Vec<f64> = (0..50).map(|i| 5.0 + 0.01 * i as f64).collect();
        assert_eq!(mia_from_losses(&m, &n, &[0.1, 0.2]).unwrap(), 1.0);
        assert_eq!(mia_from_losses(&m, &n, &[6.0, 7.0]).unwrap(), 0.0);
    }

    #[test]
    fn rejects_empty() {
        assert!(mia_from_losses(&[], &[1.0], &[1.0]).is_err());
    }
}
