//! Chronological out-of-time holdout plus a seeded train/validation split.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::features::{event_vocabulary, FeatureLayout};
use super::inference::carry_forward_policy;
use super::pairs::{read_pairs, write_pairs, PairExample, PAIR_COLUMNS};
use super::records::YearMonth;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitPolicy {
    /// Trailing months of lead dates held out as the out-of-time set.
    pub ots_months: u32,
    pub validation_fraction: f64,
    /// Keep all pairs of an item on the same side of the train/validation cut.
    pub by_item: bool,
}

impl Default for SplitPolicy {
    fn default() -> Self {
        Self {
            ots_months: 3,
            validation_fraction: 0.2,
            by_item: false,
        }
    }
}

/// Identity of a pair dataset's column layout; models record the hash of
/// the dataset they were trained on.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSchema {
    pub columns: Vec<String>,
    pub events: BTreeSet<String>,
}

impl DatasetSchema {
    pub fn for_pairs(pairs: &[PairExample]) -> Self {
        Self {
            columns: PAIR_COLUMNS.iter().map(|c| (*c).to_owned()).collect(),
            events: event_vocabulary(pairs),
        }
    }

    pub fn hash(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("schema serializes");
        let digest = Sha256::digest(&canonical);
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowCounts {
    pub train: usize,
    pub validation: usize,
    pub out_of_time: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub schema_hash: String,
    pub seed: u64,
    /// First lead month of the out-of-time set.
    pub boundary_month: YearMonth,
    pub policy: SplitPolicy,
    pub row_counts: RowCounts,
    pub features: FeatureLayout,
    pub schema: DatasetSchema,
    pub carry_forward_policy: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<PairExample>,
    pub validation: Vec<PairExample>,
    pub out_of_time: Vec<PairExample>,
    pub manifest: SplitManifest,
}

/// Splits pairs into train, validation and out-of-time sets.
///
/// The out-of-time set holds every pair whose lead month falls in the last
/// `ots_months` months of the span. The remainder is shuffled with `seed`
/// and cut by `validation_fraction`. Each output set keeps the input order.
pub fn split(pairs: Vec<PairExample>, policy: &SplitPolicy, seed: u64) -> Result<DatasetSplit> {
    if !(0.0..1.0).contains(&policy.validation_fraction) {
        return Err(Error::Config(format!(
            "validation fraction must be in [0, 1), got {}",
            policy.validation_fraction
        )));
    }
    let (Some(first), Some(last)) = (
        pairs.iter().map(|p| p.lag_month).min(),
        pairs.iter().map(|p| p.lead_month).max(),
    ) else {
        return Err(Error::Config("no pairs to split".into()));
    };
    let span = first.months_until(last) + 1;
    if span < policy.ots_months as i64 + 1 || span < 4 {
        return Err(Error::Config(format!(
            "data spans {span} months; need at least {} for a {}-month out-of-time set",
            (policy.ots_months as i64 + 1).max(4),
            policy.ots_months
        )));
    }
    let boundary = last.plus(1 - policy.ots_months as i64);
    let schema = DatasetSchema::for_pairs(&pairs);
    let features = FeatureLayout::standard(&schema.events);

    let (out_of_time, rest): (Vec<_>, Vec<_>) = pairs.into_iter().partition(|p| p.lead_month >= boundary);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let in_validation: Vec<bool> = if policy.by_item {
        let mut items: Vec<&str> = rest
            .iter()
            .map(|p| p.item_id.as_str())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        items.shuffle(&mut rng);
        let n_val = (items.len() as f64 * policy.validation_fraction).round() as usize;
        let held: BTreeSet<&str> = items[..n_val].iter().copied().collect();
        rest.iter().map(|p| held.contains(p.item_id.as_str())).collect()
    } else {
        let mut order: Vec<usize> = (0..rest.len()).collect();
        order.shuffle(&mut rng);
        let n_val = (rest.len() as f64 * policy.validation_fraction).round() as usize;
        let mut flags = vec![false; rest.len()];
        for &i in &order[..n_val] {
            flags[i] = true;
        }
        flags
    };
    let mut train = Vec::new();
    let mut validation = Vec::new();
    for (p, v) in rest.into_iter().zip(in_validation) {
        if v {
            validation.push(p);
        } else {
            train.push(p);
        }
    }

    let manifest = SplitManifest {
        schema_hash: schema.hash(),
        seed,
        boundary_month: boundary,
        policy: policy.clone(),
        row_counts: RowCounts {
            train: train.len(),
            validation: validation.len(),
            out_of_time: out_of_time.len(),
        },
        features,
        schema,
        carry_forward_policy: carry_forward_policy(),
    };
    Ok(DatasetSplit {
        train,
        validation,
        out_of_time,
        manifest,
    })
}

pub const TRAIN_FILE: &str = "train.csv";
pub const VALIDATION_FILE: &str = "validation.csv";
pub const OTS_FILE: &str = "out_of_time.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

impl DatasetSplit {
    /// Writes the three pair CSVs and the manifest into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, rows) in [
            (TRAIN_FILE, &self.train),
            (VALIDATION_FILE, &self.validation),
            (OTS_FILE, &self.out_of_time),
        ] {
            let mut buf = Vec::new();
            write_pairs(&mut buf, rows)?;
            write_file(&dir.join(name), &buf)?;
        }
        let mut json = serde_json::to_vec_pretty(&self.manifest)?;
        json.push(b'\n');
        write_file(&dir.join(MANIFEST_FILE), &json)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let read = |name: &str| -> Result<Vec<PairExample>> {
            let path = dir.join(name);
            let f = fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
            read_pairs(std::io::BufReader::new(f))
        };
        let mpath = dir.join(MANIFEST_FILE);
        let manifest: SplitManifest = serde_json::from_slice(&fs::read(&mpath).map_err(|e| Error::io(&mpath, e))?)?;
        let split = Self {
            train: read(TRAIN_FILE)?,
            validation: read(VALIDATION_FILE)?,
            out_of_time: read(OTS_FILE)?,
            manifest,
        };
        let counts = RowCounts {
            train: split.train.len(),
            validation: split.validation.len(),
            out_of_time: split.out_of_time.len(),
        };
        if counts != split.manifest.row_counts {
            return Err(Error::Integrity(format!(
                "row counts {counts:?} disagree with manifest {:?}",
                split.manifest.row_counts
            )));
        }
        Ok(split)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::pairs::build_pairs;
    use crate::data::records::TransactionMonth;

    fn months(item: &str, n: usize) -> Vec<TransactionMonth> {
        let start: YearMonth = "2022-01".parse().unwrap();
        (0..n)
            .map(|i| TransactionMonth {
                item_id: item.into(),
                year_month: start.plus(i as i64),
                price: 1.0 + i as f64 * 0.1,
                units_sold: 3.0,
                inventory: 9.0,
                oos_days: 0.0,
                rating_count: 0.0,
                days_launched: 0.0,
                competitor_price: None,
                substitute_available: false,
                event_flags: Default::default(),
                brand: "b".into(),
                size: "s".into(),
                category: "c".into(),
                subcategory: "d".into(),
            })
            .collect()
    }

    #[test]
    fn ots_is_last_three_lead_months() {
        let pairs = build_pairs(&months("A", 27));
        let s = split(pairs, &SplitPolicy::default(), 1).unwrap();
        assert_eq!(s.manifest.boundary_month, "2024-01".parse().unwrap());
        let ots_leads: BTreeSet<u32> = s.out_of_time.iter().map(|p| p.lead_month.as_u32()).collect();
        assert_eq!(ots_leads, [202401, 202402, 202403].into());
        let max_train = s.train.iter().chain(&s.validation).map(|p| p.lead_month).max().unwrap();
        assert!(max_train < s.manifest.boundary_month);
    }

    #[test]
    fn hundred_rest_pairs_split_eighty_twenty() {
        let mut pairs = build_pairs(&["A", "B", "C"].map(|i| months(i, 12)).concat());
        let boundary: YearMonth = "2022-10".parse().unwrap();
        let mut rest: Vec<_> = pairs.iter().filter(|p| p.lead_month < boundary).cloned().collect();
        rest.truncate(100);
        let ots: Vec<_> = pairs.drain(..).filter(|p| p.lead_month >= boundary).collect();
        assert_eq!(rest.len(), 100);
        let s = split([rest, ots].concat(), &SplitPolicy::default(), 5).unwrap();
        assert_eq!((s.train.len(), s.validation.len()), (80, 20));
    }

    #[test]
    fn same_seed_same_membership() {
        let pairs = build_pairs(&[months("A", 20), months("B", 20)].concat());
        let a = split(pairs.clone(), &SplitPolicy::default(), 9).unwrap();
        let b = split(pairs.clone(), &SplitPolicy::default(), 9).unwrap();
        assert_eq!(a, b);
        let c = split(pairs, &SplitPolicy::default(), 10).unwrap();
        assert_ne!(a.validation, c.validation);
    }

    #[test]
    fn item_split_keeps_items_together() {
        let recs: Vec<_> = (0..10).flat_map(|i| months(&format!("I{i}"), 15)).collect();
        let policy = SplitPolicy {
            by_item: true,
            ..Default::default()
        };
        let s = split(build_pairs(&recs), &policy, 3).unwrap();
        let tr: BTreeSet<&str> = s.train.iter().map(|p| p.item_id.as_str()).collect();
        let va: BTreeSet<&str> = s.validation.iter().map(|p| p.item_id.as_str()).collect();
        assert!(tr.is_disjoint(&va));
        assert_eq!(va.len(), 2);
    }

    #[test]
    fn short_span_is_rejected() {
        let pairs = build_pairs(&months("A", 3));
        assert!(matches!(
            split(pairs, &SplitPolicy::default(), 0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let s = split(build_pairs(&months("A", 10)), &SplitPolicy::default(), 2).unwrap();
        s.save(dir.path()).unwrap();
        assert_eq!(DatasetSplit::load(dir.path()).unwrap(), s);
    }
}
