use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::features::{Categorical, Continuous, FeatureLayout, LEAD_PRICE, PRICE_CHANGE_PCT};
use crate::data::pairs::PairExample;
use crate::error::{Error, Result};
use crate::monodense::{ActivationSplit, BaseActivation, Monotonicity};

/// Reserved embedding row for levels not seen during training.
pub const UNKNOWN_INDEX: usize = 0;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoricalSpec {
    pub name: String,
    /// Known levels; level `i` maps to embedding row `i + 1`.
    pub vocabulary: Vec<String>,
}

impl CategoricalSpec {
    pub fn cardinality(&self) -> usize {
        self.vocabulary.len() + 1
    }

    pub fn index_of(&self, level: &str) -> usize {
        self.vocabulary
            .binary_search_by(|v| v.as_str().cmp(level))
            .map_or(UNKNOWN_INDEX, |i| i + 1)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MonotoneSpec {
    pub name: String,
    pub direction: Monotonicity,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub categorical: Vec<CategoricalSpec>,
    pub continuous: Vec<String>,
    pub monotone: Vec<MonotoneSpec>,
    /// Hash of the pair dataset layout this schema was derived from.
    pub dataset_hash: String,
}

impl FeatureSchema {
    /// Schema for `layout` with vocabularies collected from `pairs`.
    pub fn from_pairs(layout: &FeatureLayout, pairs: &[PairExample], dataset_hash: &str) -> Result<Self> {
        let mut categorical = Vec::with_capacity(layout.categorical.len());
        for name in &layout.categorical {
            let feature = Categorical::parse(name)?;
            let levels: BTreeSet<String> = pairs.iter().map(|p| feature.value(p)).collect();
            categorical.push(CategoricalSpec {
                name: name.clone(),
                vocabulary: levels.into_iter().collect(),
            });
        }
        let schema = Self {
            categorical,
            continuous: layout.continuous.clone(),
            monotone: layout
                .monotone
                .iter()
                .map(|n| MonotoneSpec {
                    name: n.clone(),
                    direction: Monotonicity::Decreasing,
                })
                .collect(),
            dataset_hash: dataset_hash.to_owned(),
        };
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        let names = self
            .categorical
            .iter()
            .map(|c| &c.name)
            .chain(&self.continuous)
            .chain(self.monotone.iter().map(|m| &m.name));
        for n in names {
            if !seen.insert(n) {
                return Err(Error::Config(format!("feature {n:?} appears more than once")));
            }
        }
        for c in &self.categorical {
            Categorical::parse(&c.name)?;
            if c.vocabulary.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Config(format!(
                    "vocabulary of {} must be sorted and unique",
                    c.name
                )));
            }
        }
        for n in &self.continuous {
            Continuous::parse(n)?;
        }
        if !self.monotone.iter().any(|m| m.name == LEAD_PRICE) {
            return Err(Error::Config(format!("monotone features must include {LEAD_PRICE}")));
        }
        for m in &self.monotone {
            if m.name != LEAD_PRICE && m.name != PRICE_CHANGE_PCT {
                return Err(Error::Config(format!("unsupported monotone feature {:?}", m.name)));
            }
            if m.direction == Monotonicity::Free {
                return Err(Error::Config(format!("monotone feature {} needs a direction", m.name)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchitectureConfig {
    /// Output width of each per-feature continuous encoder.
    pub continuous_width: usize,
    pub trunk_widths: Vec<usize>,
    pub injection_width: usize,
    pub post_widths: Vec<usize>,
    pub activation: BaseActivation,
    pub split: ActivationSplit,
    /// Per-feature embedding dimension overrides.
    pub embedding_dims: BTreeMap<String, usize>,
    /// Pass prices, counts and durations through `ln(1 + x)`, lead price
    /// through `ln p` and price change through `ln(1 + pct)`.
    pub log_inputs: bool,
    /// Fit `ln(1 + units)` and invert with `exp(·) - 1`.
    pub log_target: bool,
}

impl Default for ArchitectureConfig {
    fn default() -> Self {
        Self {
            continuous_width: 8,
            trunk_widths: vec![128, 64],
            injection_width: 64,
            post_widths: vec![32],
            activation: BaseActivation::Relu,
            split: ActivationSplit::default(),
            embedding_dims: BTreeMap::new(),
            log_inputs: true,
            log_target: true,
        }
    }
}

impl ArchitectureConfig {
    pub fn validate(&self) -> Result<()> {
        let widths = std::iter::once(self.continuous_width)
            .chain(self.trunk_widths.iter().copied())
            .chain(std::iter::once(self.injection_width))
            .chain(self.post_widths.iter().copied())
            .chain(self.embedding_dims.values().copied());
        if widths.into_iter().any(|w| w == 0) {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        self.split.validate()
    }

    pub fn embedding_dim(&self, spec: &CategoricalSpec) -> usize {
        self.embedding_dims
            .get(&spec.name)
            .copied()
            .unwrap_or_else(|| default_embedding_dim(spec.cardinality()))
    }
}

/// `min(32, ⌈√cardinality⌉)`.
pub fn default_embedding_dim(cardinality: usize) -> usize {
    let mut d = (cardinality as f64).sqrt().ceil() as usize;
    while d * d < cardinality {
        d += 1;
    }
    d.clamp(1, 32)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub mean: f64,
    pub std: f64,
}

impl FeatureStats {
    pub const IDENTITY: FeatureStats = FeatureStats { mean: 0.0, std: 1.0 };

    pub fn apply(&self, x: f64) -> f64 {
        (x - self.mean) / self.std
    }
}

/// Input standardization and target scaling, fit on training rows only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizationStats {
    pub continuous: Vec<FeatureStats>,
    pub monotone: Vec<FeatureStats>,
    pub target: FeatureStats,
}

impl StandardizationStats {
    pub fn identity(schema: &FeatureSchema) -> Self {
        Self {
            continuous: vec![FeatureStats::IDENTITY; schema.continuous.len()],
            monotone: vec![FeatureStats::IDENTITY; schema.monotone.len()],
            target: FeatureStats::IDENTITY,
        }
    }

    /// SHA-256 of the exact bit patterns of every statistic.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for s in self.continuous.iter().chain(&self.monotone).chain([&self.target]) {
            h.update(s.mean.to_bits().to_le_bytes());
            h.update(s.std.to_bits().to_le_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self, schema: &FeatureSchema) -> Result<()> {
        if self.continuous.len() != schema.continuous.len() || self.monotone.len() != schema.monotone.len() {
            return Err(Error::Config(
                "standardization statistics do not match the schema".into(),
            ));
        }
        let all = self.continuous.iter().chain(&self.monotone).chain([&self.target]);
        for s in all {
            if !(s.std > 0.0) || !s.std.is_finite() || !s.mean.is_finite() {
                return Err(Error::Config(format!("invalid standardization entry {s:?}")));
            }
        }
        Ok(())
    }
}
