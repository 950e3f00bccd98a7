use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hybrid::ArchSpec;
use crate::train::TrainConfig;

/// Upper bound on unlearning epochs for every method.
pub const MAX_UNLEARN_EPOCHS: usize = 25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MethodId {
    Ga,
    Fisher,
    NegGradPlus,
    CfK,
    EuK,
    Scrub,
    ScrubR,
    Certified,
    QMul,
    Lca,
    AdvUniform,
}

impl MethodId {
    pub const ALL: [MethodId; 11] = [
        MethodId::Ga,
        MethodId::Fisher,
        MethodId::NegGradPlus,
        MethodId::CfK,
        MethodId::EuK,
        MethodId::Scrub,
        MethodId::ScrubR,
        MethodId::Certified,
        MethodId::QMul,
        MethodId::Lca,
        MethodId::AdvUniform,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MethodId::Ga => "GA",
            MethodId::Fisher => "Fisher",
            MethodId::NegGradPlus => "NegGrad+",
            MethodId::CfK => "CF-k",
            MethodId::EuK => "EU-k",
            MethodId::Scrub => "SCRUB",
            MethodId::ScrubR => "SCRUB+R",
            MethodId::Certified => "Certified",
            MethodId::QMul => "Q-MUL",
            MethodId::Lca => "LCA",
            MethodId::AdvUniform => "ADV-UNIFORM",
        }
    }

    /// Report label, with `k` substituted for the layer methods (`CF-k1`).
    pub fn label(self, k: usize) -> String {
        match self {
            MethodId::CfK | MethodId::EuK => format!("{}{k}", self.as_str()),
            _ => self.as_str().to_owned(),
        }
    }

    pub fn valid_ids() -> String {
        Self::ALL.map(|m| m.as_str()).join(", ")
    }
}

impl fmt::Display for MethodId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MethodId {
    type Err = Error;

    /// Case-insensitive; `CF-k1`, `EU-k2` style labels are accepted too.
    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        let base = t.trim_end_matches(|c: char| c.is_ascii_digit());
        Self::ALL
            .into_iter()
            .find(|m| {
                m.as_str().eq_ignore_ascii_case(t)
                    || (matches!(m, MethodId::CfK | MethodId::EuK)
                        && base.len() < t.len()
                        && m.as_str().eq_ignore_ascii_case(base))
            })
            .ok_or_else(|| Error::config(format!("unknown method {s:?}; valid ids: {}", Self::valid_ids())))
    }
}

impl Serialize for MethodId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for MethodId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Budget and hyperparameters shared by all methods.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UnlearnConfig {
    pub max_epochs: usize,
    pub patience: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// Retain weight in NegGrad+.
    pub alpha: f64,
    /// Output-side layer groups touched by CF-k / EU-k.
    pub k: usize,
    pub eps_adv: f64,
    pub sigma_noise: f64,
    pub lambda_fisher: f64,
    /// Upper bound on the per-parameter Fisher noise variance.
    pub fisher_var_cap: f64,
    /// SCRUB epochs that include a forget-side max pass.
    pub scrub_max_steps: usize,
    /// LCA ablation: cross-entropy against the complement labels instead of
    /// `KL(prediction || complement)`.
    pub lca_reversed: bool,
    pub seed: u64,
}

impl Default for UnlearnConfig {
    fn default() -> Self {
        UnlearnConfig {
            max_epochs: MAX_UNLEARN_EPOCHS,
            patience: 5,
            lr: 5e-4,
            batch_size: 16,
            alpha: 0.9,
            k: 1,
            eps_adv: 0.1,
            sigma_noise: 0.01,
            lambda_fisher: 1e-4,
            fisher_var_cap: 1e-2,
            scrub_max_steps: 2,
            lca_reversed: false,
            seed: 0,
        }
    }
}

impl UnlearnConfig {
    /// Defaults for `spec`'s dataset: half the training learning rate and
    /// the same batch size.
    pub fn for_spec(spec: &ArchSpec) -> Self {
        let t = TrainConfig::for_spec(spec);
        UnlearnConfig {
            lr: t.lr / 2.0,
            batch_size: t.batch_size,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_epochs > MAX_UNLEARN_EPOCHS {
            return Err(Error::config(format!(
                "max_epochs {} exceeds the budget of {MAX_UNLEARN_EPOCHS}",
                self.max_epochs
            )));
        }
        if self.patience == 0 || self.batch_size == 0 {
            return Err(Error::config("patience and batch_size must be at least 1"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config(format!("learning rate {} must be positive", self.lr)));
        }
        if !(self.eps_adv > 0.0) {
            return Err(Error::config("eps_adv must be positive"));
        }
        // alpha = 1 is accepted so the retain-only limit can be run directly
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::config(format!("alpha {} not in (0, 1]", self.alpha)));
        }
        if self.k == 0 {
            return Err(Error::config("k must be at least 1"));
        }
        if !(self.sigma_noise >= 0.0) || !(self.lambda_fisher >= 0.0) || !(self.fisher_var_cap > 0.0) {
            return Err(Error::config("noise scales must be non-negative"));
        }
        Ok(())
    }
}
