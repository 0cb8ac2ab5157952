use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Named parameter groups of a tabular foundation model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    XEncoder,
    YEncoder,
    TransformerBlocks,
    Decoder,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 4] = [
        ParamGroup::XEncoder,
        ParamGroup::YEncoder,
        ParamGroup::TransformerBlocks,
        ParamGroup::Decoder,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ParamGroup::XEncoder => "x_encoder",
            ParamGroup::YEncoder => "y_encoder",
            ParamGroup::TransformerBlocks => "transformer_blocks",
            ParamGroup::Decoder => "decoder",
        }
    }
}

impl fmt::Display for ParamGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ParamGroup {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ParamGroup::ALL
            .into_iter()
            .find(|g| g.name() == s)
            .ok_or_else(|| {
                Error::invalid(format!(
                    "unknown parameter group {s:?}; expected one of x_encoder, y_encoder, transformer_blocks, decoder"
                ))
            })
    }
}

/// A named dense tensor, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub name: String,
    pub group: ParamGroup,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(name: impl Into<String>, group: ParamGroup, shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Self {
            name: name.into(),
            group,
            shape,
            data: vec![0.0; len],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// All parameters of a model; every tensor belongs to exactly one group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSet {
    pub tensors: Vec<Tensor>,
}

/// Gradients laid out like the tensors of a [`ParameterSet`].
pub type Gradients = Vec<Vec<f64>>;

impl ParameterSet {
    pub fn new(tensors: Vec<Tensor>) -> Self {
        Self { tensors }
    }

    pub fn zeros_like(&self) -> Gradients {
        self.tensors.iter().map(|t| vec![0.0; t.len()]).collect()
    }

    pub fn total_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn group_map(&self) -> ParameterGroupMap {
        let mut groups: BTreeMap<ParamGroup, usize> =
            ParamGroup::ALL.into_iter().map(|g| (g, 0)).collect();
        for t in &self.tensors {
            *groups.entry(t.group).or_default() += t.len();
        }
        ParameterGroupMap {
            groups,
            frozen: BTreeSet::new(),
        }
    }

    /// SHA-256 over the exact bits of one group's tensors.
    pub fn group_checksum(&self, group: ParamGroup) -> String {
        let mut h = Sha256::new();
        for t in self.tensors.iter().filter(|t| t.group == group) {
            h.update(t.name.as_bytes());
            for v in &t.data {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for g in ParamGroup::ALL {
            h.update(self.group_checksum(g).as_bytes());
        }
        hex::encode(h.finalize())
    }

    /// Euclidean distance to `other` over every parameter.
    pub fn distance(&self, other: &ParameterSet) -> f64 {
        self.tensors
            .iter()
            .zip(&other.tensors)
            .flat_map(|(a, b)| a.data.iter().zip(&b.data))
            .map(|(x, y)| (x - y).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    pub fn same_layout(&self, other: &ParameterSet) -> bool {
        self.tensors.len() == other.tensors.len()
            && self
                .tensors
                .iter()
                .zip(&other.tensors)
                .all(|(a, b)| a.name == b.name && a.group == b.group && a.shape == b.shape)
    }
}

/// Parameter counts per group plus the frozen subset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParameterGroupMap {
    pub groups: BTreeMap<ParamGroup, usize>,
    pub frozen: BTreeSet<ParamGroup>,
}

impl ParameterGroupMap {
    pub fn from_counts(counts: impl IntoIterator<Item = (ParamGroup, usize)>) -> Self {
        let mut groups: BTreeMap<ParamGroup, usize> =
            ParamGroup::ALL.into_iter().map(|g| (g, 0)).collect();
        for (g, n) in counts {
            groups.insert(g, n);
        }
        Self {
            groups,
            frozen: BTreeSet::new(),
        }
    }

    pub fn total_count(&self) -> usize {
        self.groups.values().sum()
    }

    pub fn frozen_count(&self) -> usize {
        self.frozen.iter().map(|g| self.groups[g]).sum()
    }

    pub fn trainable_count(&self) -> usize {
        self.total_count() - self.frozen_count()
    }

    pub fn is_frozen(&self, group: ParamGroup) -> bool {
        self.frozen.contains(&group)
    }

    /// Adds `names` to the frozen set.
    pub fn freeze<S: AsRef<str>>(&self, names: &[S]) -> Result<Self> {
        let mut out = self.clone();
        for name in names {
            out.frozen.insert(name.as_ref().parse()?);
        }
        Ok(out)
    }

    pub fn with_frozen(&self, frozen: &BTreeSet<ParamGroup>) -> Self {
        Self {
            groups: self.groups.clone(),
            frozen: frozen.clone(),
        }
    }
}
