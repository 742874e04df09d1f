//! Transaction ingestion, lead/lag pair construction and dataset splits.

pub mod features;
pub mod inference;
pub mod pairs;
pub mod records;
pub mod split;

pub use features::{monotone_inputs, Categorical, Continuous, FeatureLayout};
pub use inference::{build_inference_set, InferenceSet, SkippedItem};
pub use pairs::{build_pairs, build_pairs_with, is_valid_pair, price_change_pct, MonthSignals, PairExample};
pub use records::{ingest, read_transactions, write_transactions, TransactionMonth, YearMonth};
pub use split::{split, DatasetSchema, DatasetSplit, SplitManifest, SplitPolicy};
