//! Demand network with a price path that is monotone by construction.

pub mod container;
pub mod network;
pub mod schema;

pub use container::{decode_model, encode_model, load_model, save_model};
pub use network::{build_model, input_features, DemandModel, EncodedBatch, InputFeatures};
pub use schema::{
    default_embedding_dim, ArchitectureConfig, CategoricalSpec, FeatureSchema, FeatureStats, MonotoneSpec,
    StandardizationStats, UNKNOWN_INDEX,
};
