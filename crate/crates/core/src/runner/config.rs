use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::data::ForgetSpec;
use crate::error::{Error, Result};
use crate::hybrid::{ArchSpec, DatasetTag};
use crate::metrics::KlDirection;
use crate::train::TrainConfig;
use crate::unlearn::{MethodId, UnlearnConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    #[serde(default)]
    pub name: String,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Method ids; `CF-k2` style entries also set `k`. Empty means all.
    #[serde(default)]
    pub methods: Vec<String>,
    /// Output directory, relative to the config file.
    #[serde(default = "default_out")]
    pub out: String,
}

fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2]
}

fn default_out() -> String {
    "out".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub dataset: DatasetTag,
    /// Iris CSV path.
    pub csv: Option<String>,
    pub images: Option<String>,
    pub labels: Option<String>,
    pub csv_sha256: Option<String>,
    pub images_sha256: Option<String>,
    pub labels_sha256: Option<String>,
    /// Samples kept per class before splitting (image datasets).
    pub per_class: Option<usize>,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
}

fn default_test_fraction() -> f64 {
    0.2
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    Subset,
    FullClass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSection {
    pub kind: ScenarioKind,
    #[serde(default = "default_fraction")]
    pub fraction: f64,
    /// Forgotten class; defaults to the last class.
    pub class: Option<usize>,
    #[serde(default)]
    pub stratified: bool,
}

fn default_fraction() -> f64 {
    0.02
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchSection {
    pub layers: Option<usize>,
    pub conv_channels: Option<(usize, usize)>,
    pub head_hidden: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub max_epochs: Option<usize>,
    pub patience: Option<usize>,
    pub lr: Option<f64>,
    pub batch_size: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsSection {
    #[serde(default)]
    pub kl_direction: KlDirection,
}

/// A parsed experiment file. See the book chapter on running experiments
/// for the grammar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    pub data: DataSection,
    pub scenario: ScenarioSection,
    #[serde(default)]
    pub arch: ArchSection,
    #[serde(default)]
    pub train: TrainSection,
    /// Overrides of the unlearning defaults shared by every method.
    #[serde(default)]
    pub unlearn: BTreeMap<String, Value>,
    /// Per-method overrides, keyed by method id.
    #[serde(default)]
    pub method: BTreeMap<String, BTreeMap<String, Value>>,
    #[serde(default)]
    pub metrics: MetricsSection,
    /// Directory relative paths resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

/// One method entry of the run, with its resolved hyperparameters (seed unset).
#[derive(Debug, Clone, PartialEq)]
pub struct MethodPlan {
    pub method: MethodId,
    pub config: UnlearnConfig,
}

impl MethodPlan {
    pub fn label(&self) -> String {
        self.method.label(self.config.k)
    }
}

fn merge(base: &mut Value, over: &BTreeMap<String, Value>, what: &str) -> Result<()> {
    let obj = base.as_object_mut().expect("struct serializes to an object");
    for (k, v) in over {
        if k == "seed" {
            return Err(Error::config(format!("{what}: seeds come from [experiment] seeds")));
        }
        obj.insert(k.clone(), v.clone());
    }
    Ok(())
}

/// Splits `EU-k2` into the method and its `k`.
fn parse_entry(entry: &str) -> Result<(MethodId, Option<usize>)> {
    let m: MethodId = entry.parse()?;
    let digits: String = entry.trim().chars().rev().take_while(char::is_ascii_digit).collect();
    let k = match m {
        MethodId::CfK | MethodId::EuK if !digits.is_empty() => {
            Some(digits.chars().rev().collect::<String>().parse().map_err(|_| Error::config("bad k"))?)
        }
        _ => None,
    };
    Ok((m, k))
}

impl ExperimentConfig {
    pub fn parse(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        cfg.base_dir = base_dir.into();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read config {}: {e}", path.display())))?;
        let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, dir)
    }

    pub fn validate(&self) -> Result<()> {
        if self.experiment.seeds.is_empty() {
            return Err(Error::config("at least one seed is required"));
        }
        self.arch_spec()?;
        self.train_config(0)?.validate()?;
        let plans = self.method_plans()?;
        for p in &plans {
            p.config.validate()?;
        }
        self.forget_spec(0)?;
        let d = &self.data;
        match d.dataset {
            DatasetTag::Iris if d.csv.is_none() => Err(Error::config("iris needs data.csv")),
            t if t.is_image() && (d.images.is_none() || d.labels.is_none()) => {
                Err(Error::config("image datasets need data.images and data.labels"))
            }
            _ if !(d.test_fraction > 0.0 && d.test_fraction < 1.0) => {
                Err(Error::config("data.test_fraction must be in (0, 1)"))
            }
            _ => Ok(()),
        }
    }

    pub fn resolve(&self, rel: &str) -> PathBuf {
        let p = Path::new(rel);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn out_dir(&self) -> PathBuf {
        self.resolve(&self.experiment.out)
    }

    pub fn arch_spec(&self) -> Result<ArchSpec> {
        let mut spec = ArchSpec::for_dataset(self.data.dataset);
        if let Some(l) = self.arch.layers {
            spec.layers = l;
        }
        if let Some(c) = self.arch.conv_channels {
            spec.conv_channels = Some(c);
        }
        if let Some(h) = self.arch.head_hidden {
            spec.head_hidden = Some(h);
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn train_config(&self, seed: u64) -> Result<TrainConfig> {
        let mut t = TrainConfig::for_spec(&self.arch_spec()?);
        let s = &self.train;
        t.max_epochs = s.max_epochs.unwrap_or(t.max_epochs);
        t.patience = s.patience.unwrap_or(t.patience);
        t.lr = s.lr.unwrap_or(t.lr);
        t.batch_size = s.batch_size.unwrap_or(t.batch_size);
        t.seed = seed;
        Ok(t)
    }

    /// Methods in run order with their merged hyperparameters.
    pub fn method_plans(&self) -> Result<Vec<MethodPlan>> {
        let spec = self.arch_spec()?;
        let entries: Vec<(MethodId, Option<usize>)> = if self.experiment.methods.is_empty() {
            MethodId::ALL.iter().map(|&m| (m, None)).collect()
        } else {
            self.experiment
                .methods
                .iter()
                .map(|e| parse_entry(e))
                .collect::<Result<_>>()?
        };
        let plans = entries
            .into_iter()
            .map(|(m, k)| self.plan(&spec, m, k))
            .collect::<Result<Vec<_>>>()?;
        let mut labels: Vec<String> = plans.iter().map(MethodPlan::label).collect();
        labels.sort();
        if labels.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::config("method list contains duplicates"));
        }
        Ok(plans)
    }

    /// Resolves one entry such as `"EU-k2"` against the overrides, whether
    /// or not it is listed in `[experiment] methods`.
    pub fn plan_for(&self, entry: &str) -> Result<MethodPlan> {
        let (m, k) = parse_entry(entry)?;
        let plan = self.plan(&self.arch_spec()?, m, k)?;
        plan.config.validate()?;
        Ok(plan)
    }

    fn plan(&self, spec: &ArchSpec, m: MethodId, k: Option<usize>) -> Result<MethodPlan> {
        let mut v = serde_json::to_value(UnlearnConfig::for_spec(spec)).expect("serializable");
        merge(&mut v, &self.unlearn, "[unlearn]")?;
        for (name, table) in &self.method {
            if parse_entry(name)?.0 == m {
                merge(&mut v, table, &format!("[method.{name}]"))?;
            }
        }
        let mut config: UnlearnConfig = serde_json::from_value(v).map_err(|e| Error::config(format!("method {m}: {e}")))?;
        if let Some(k) = k {
            config.k = k;
        }
        Ok(MethodPlan { method: m, config })
    }

    pub fn forget_spec(&self, seed: u64) -> Result<ForgetSpec> {
        let s = &self.scenario;
        match s.kind {
            ScenarioKind::Subset => {
                if !(s.fraction > 0.0 && s.fraction < 1.0) {
                    return Err(Error::config("scenario.fraction must be in (0, 1)"));
                }
                Ok(ForgetSpec::Subset {
                    fraction: s.fraction,
                    seed,
                    stratified: s.stratified,
                })
            }
            ScenarioKind::FullClass => {
                let k = self.arch_spec()?.classes;
                let class = s.class.unwrap_or(k - 1);
                if class >= k {
                    return Err(Error::config(format!("scenario.class {class} outside 0..{k}")));
                }
                Ok(ForgetSpec::FullClass { class })
            }
        }
    }

    /// SHA-256 of the canonical JSON form: keys sorted, so reordering
    /// fields or sections in the file does not change it.
    pub fn hash(&self) -> String {
        let v = serde_json::to_value(self).expect("serializable");
        let bytes = serde_json::to_vec(&v).expect("serializable");
        crate::data::hex(&Sha256::digest(&bytes))
    }
}
