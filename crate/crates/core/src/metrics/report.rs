use serde::{Deserialize, Serialize};

use super::{accuracy, agreement, divergences, macro_f1, mia_score, state_distance, ProbTable};
use crate::data::SplitDataset;
use crate::error::{Error, Result};
use crate::hybrid::HybridModel;

/// Denominator guard in [`uqi`].
pub const UQI_DELTA: f64 = 1e-6;

/// Attached to every report that carries a UQI column.
pub const UQI_NOTE: &str = "uqi is a reconstructed index: clamp((af0 - af1) / (af0 - afR + 1e-6), -1, 1) \
     - max(0, ar0 - ar1) / (ar0 + 1e-6), where af/ar are forget/retain accuracy of the original (0), \
     unlearned (1) and retrained (R) models; it is 1 whenever af1 == afR and retain accuracy did not drop";

/// One result row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub acc_retain: f64,
    pub acc_test: f64,
    pub f1_test: f64,
    pub acc_forget: f64,
    pub uqi: f64,
    pub agree_test: f64,
    /// Absent for full-class scenarios.
    pub mia: Option<f64>,
    pub kl_retain: f64,
    pub js_retain: f64,
    pub kl_test: f64,
    pub js_test: f64,
    pub fidelity_mean: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UqiInputs {
    pub acc_forget_original: f64,
    pub acc_forget_unlearned: f64,
    pub acc_forget_oracle: f64,
    pub acc_retain_original: f64,
    pub acc_retain_unlearned: f64,
}

/// Forgetting alignment with the oracle minus relative retain-accuracy loss.
pub fn uqi(u: &UqiInputs) -> f64 {
    let alignment = if u.acc_forget_unlearned == u.acc_forget_oracle {
        1.0
    } else {
        ((u.acc_forget_original - u.acc_forget_unlearned)
            / (u.acc_forget_original - u.acc_forget_oracle + UQI_DELTA))
            .clamp(-1.0, 1.0)
    };
    let penalty = (u.acc_retain_original - u.acc_retain_unlearned).max(0.0) / (u.acc_retain_original + UQI_DELTA);
    alignment - penalty
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KlDirection {
    /// `KL(unlearned || oracle)`.
    #[default]
    UnlearnedOracle,
    OracleUnlearned,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalOptions {
    pub kl_direction: KlDirection,
    /// Seeds the calibration halves of the membership attack.
    pub seed: u64,
}

/// Fills one report row for `unlearned`, using `original` and `oracle` as references.
pub fn evaluate(
    original: &HybridModel,
    unlearned: &HybridModel,
    oracle: &HybridModel,
    splits: &SplitDataset,
    opts: &EvalOptions,
) -> Result<MetricsReport> {
    if original.spec() != unlearned.spec() || oracle.spec() != unlearned.spec() {
        return Err(Error::config("evaluated models must share one architecture"));
    }
    let (retain, forget, test) = (&splits.retain, &splits.forget, &splits.test);
    let u_retain = ProbTable::of(unlearned, retain)?;
    let u_forget = ProbTable::of(unlearned, forget)?;
    let u_test = ProbTable::of(unlearned, test)?;
    let o_retain = ProbTable::of(oracle, retain)?;
    let o_test = ProbTable::of(oracle, test)?;

    let acc_retain = accuracy(&u_retain, retain.labels())?;
    let acc_forget = accuracy(&u_forget, forget.labels())?;
    let orig_forget = accuracy(&ProbTable::of(original, forget)?, forget.labels())?;
    let orig_retain = accuracy(&ProbTable::of(original, retain)?, retain.labels())?;
    let oracle_forget = accuracy(&ProbTable::of(oracle, forget)?, forget.labels())?;

    let div = |a: &ProbTable, b: &ProbTable| match opts.kl_direction {
        KlDirection::UnlearnedOracle => divergences(a, b),
        KlDirection::OracleUnlearned => divergences(b, a),
    };
    let (kl_retain, js_retain) = div(&u_retain, &o_retain)?;
    let (kl_test, js_test) = div(&u_test, &o_test)?;
    let mia = if splits.spec.is_full_class() {
        None
    } else {
        Some(mia_score(unlearned, retain, forget, test, opts.seed)?)
    };
    let (fidelity_mean, _) = state_distance(unlearned, oracle, test)?;
    Ok(MetricsReport {
        acc_retain,
        acc_test: accuracy(&u_test, test.labels())?,
        f1_test: macro_f1(&u_test, test.labels())?,
        acc_forget,
        uqi: uqi(&UqiInputs {
            acc_forget_original: orig_forget,
            acc_forget_unlearned: acc_forget,
            acc_forget_oracle: oracle_forget,
            acc_retain_original: orig_retain,
            acc_retain_unlearned: acc_retain,
        }),
        agree_test: agreement(&u_test, &o_test)?,
        mia,
        kl_retain,
        js_retain,
        kl_test,
        js_test,
        fidelity_mean,
    })
}
