use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetTag {
    Iris,
    Mnist,
    Fashion,
}

impl DatasetTag {
    pub fn as_str(self) -> &'static str {
        match self {
            DatasetTag::Iris => "iris",
            DatasetTag::Mnist => "mnist",
            DatasetTag::Fashion => "fashion",
        }
    }

    pub fn is_image(self) -> bool {
        !matches!(self, DatasetTag::Iris)
    }
}

impl fmt::Display for DatasetTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DatasetTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "iris" => Ok(DatasetTag::Iris),
            "mnist" => Ok(DatasetTag::Mnist),
            "fashion" | "fashion-mnist" | "fashion_mnist" => Ok(DatasetTag::Fashion),
            other => Err(Error::config(format!(
                "unknown dataset tag {other:?} (expected iris, mnist or fashion)"
            ))),
        }
    }
}

/// Layer groups, output side first. `k`-based methods take a prefix.
pub const GROUP_HEAD: &str = "head";
pub const GROUP_VQC: &str = "vqc";
pub const GROUP_PROJECTION: &str = "projection";
pub const GROUP_EXTRACTOR: &str = "extractor";

/// Architecture of one hybrid model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchSpec {
    pub dataset: DatasetTag,
    pub qubits: usize,
    pub layers: usize,
    pub classes: usize,
    /// Conv widths `(first, second)` for the image extractors.
    pub conv_channels: Option<(usize, usize)>,
    /// Hidden width of the two-layer MLP head (Fashion-MNIST only).
    pub head_hidden: Option<usize>,
}

impl ArchSpec {
    pub fn iris() -> Self {
        ArchSpec {
            dataset: DatasetTag::Iris,
            qubits: 4,
            layers: 2,
            classes: 3,
            conv_channels: None,
            head_hidden: None,
        }
    }

    pub fn mnist() -> Self {
        ArchSpec {
            dataset: DatasetTag::Mnist,
            qubits: 6,
            layers: 2,
            classes: 10,
            conv_channels: Some((8, 16)),
            head_hidden: None,
        }
    }

    pub fn fashion() -> Self {
        ArchSpec {
            dataset: DatasetTag::Fashion,
            qubits: 10,
            layers: 3,
            classes: 10,
            conv_channels: Some((16, 32)),
            head_hidden: Some(32),
        }
    }

    pub fn for_dataset(tag: DatasetTag) -> Self {
        match tag {
            DatasetTag::Iris => Self::iris(),
            DatasetTag::Mnist => Self::mnist(),
            DatasetTag::Fashion => Self::fashion(),
        }
    }

    pub fn with_layers(mut self, layers: usize) -> Self {
        self.layers = layers;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let expected_q = match self.dataset {
            DatasetTag::Iris => 4,
            DatasetTag::Mnist => 6,
            DatasetTag::Fashion => 10,
        };
        if self.qubits != expected_q {
            return Err(Error::config(format!(
                "{} uses {expected_q} qubits, spec says {}",
                self.dataset, self.qubits
            )));
        }
        if self.layers == 0 {
            return Err(Error::config("VQC needs at least one layer"));
        }
        if self.classes < 2 {
            return Err(Error::config("need at least two classes"));
        }
        if self.dataset.is_image() != self.conv_channels.is_some() {
            return Err(Error::config("conv widths are required exactly for image datasets"));
        }
        if matches!(self.conv_channels, Some((a, b)) if a == 0 || b == 0) {
            return Err(Error::config("conv widths must be positive"));
        }
        if self.head_hidden == Some(0) {
            return Err(Error::config("head hidden width must be positive"));
        }
        Ok(())
    }

    /// Input shape of one sample.
    pub fn sample_shape(&self) -> Vec<usize> {
        if self.dataset.is_image() {
            vec![1, 28, 28]
        } else {
            vec![4]
        }
    }

    /// Width of the features fed to the projection.
    pub fn feature_width(&self) -> usize {
        match self.conv_channels {
            Some((_, c2)) => c2 * 7 * 7,
            None => 4,
        }
    }

    /// Layer groups present in this architecture, output side first.
    pub fn layer_groups(&self) -> Vec<&'static str> {
        let mut g = vec![GROUP_HEAD, GROUP_VQC, GROUP_PROJECTION];
        if self.dataset.is_image() {
            g.push(GROUP_EXTRACTOR);
        }
        g
    }

    /// `(name, shape, fan_in, fan_out)` for every trainable tensor, in name order.
    pub(crate) fn tensor_layout(&self) -> Vec<(String, Vec<usize>, usize, usize)> {
        let q = self.qubits;
        let k = self.classes;
        let mut v: Vec<(String, Vec<usize>, usize, usize)> = Vec::new();
        if let Some((c1, c2)) = self.conv_channels {
            v.push(("extractor.conv1.bias".into(), vec![c1], 0, 0));
            v.push(("extractor.conv1.weight".into(), vec![c1, 1, 3, 3], 9, c1 * 9));
            v.push(("extractor.conv2.bias".into(), vec![c2], 0, 0));
            v.push(("extractor.conv2.weight".into(), vec![c2, c1, 3, 3], c1 * 9, c2 * 9));
        }
        match self.head_hidden {
            Some(h) => {
                v.push(("head.fc1.bias".into(), vec![h], 0, 0));
                v.push(("head.fc1.weight".into(), vec![q, h], q, h));
                v.push(("head.fc2.bias".into(), vec![k], 0, 0));
                v.push(("head.fc2.weight".into(), vec![h, k], h, k));
            }
            None => {
                v.push(("head.bias".into(), vec![k], 0, 0));
                v.push(("head.weight".into(), vec![q, k], q, k));
            }
        }
        let f = self.feature_width();
        v.push(("projection.bias".into(), vec![q], 0, 0));
        v.push(("projection.weight".into(), vec![f, q], f, q));
        v.push(("vqc.theta".into(), vec![self.layers * q * 2], 0, 0));
        v.sort_by(|a, b| a.0.cmp(&b.0));
        v
    }

    /// Number of trainable scalars `m`.
    pub fn param_count(&self) -> usize {
        self.tensor_layout()
            .iter()
            .map(|(_, s, _, _)| s.iter().product::<usize>())
            .sum()
    }
}
