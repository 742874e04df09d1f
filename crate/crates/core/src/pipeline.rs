//! End-to-end helpers shared by the command line and tests.

use crate::data::pairs::build_pairs_with;
use crate::data::records::TransactionMonth;
use crate::data::split::{split, DatasetSplit, SplitPolicy};
use crate::error::Result;
use crate::exec::Exec;
use crate::model::{build_model, ArchitectureConfig, DemandModel, FeatureSchema};
use crate::trainer::{train, TrainConfig, TrainReport};

/// Pairs and splits `records`.
pub fn build_dataset(
    records: &[TransactionMonth],
    policy: &SplitPolicy,
    seed: u64,
    exec: Exec,
) -> Result<DatasetSplit> {
    split(build_pairs_with(records, exec), policy, seed)
}

/// Builds a model whose vocabularies come from the training rows and
/// trains it. The same `config.seed` drives initialisation and shuffling.
pub fn fit_model(
    data: &DatasetSplit,
    architecture: &ArchitectureConfig,
    config: &TrainConfig,
) -> Result<(DemandModel, TrainReport)> {
    let m = &data.manifest;
    let schema = FeatureSchema::from_pairs(&m.features, &data.train, &m.schema_hash)?;
    let model = build_model(schema, architecture.clone(), config.seed)?;
    train(model, &data.train, &data.validation, config)
}
