//! Synthetic multi-domain data, attribute partitioning, the frozen image
//! encoder, and per-domain embeddings.

mod embedding;
mod encoder;
mod generate;
mod manifest;
mod partition;
mod schema;

pub use embedding::{
    domain_embedding, domain_embedding_from_bank, shuffle_embeddings, DomainEmbedding, EmbeddingTable,
};
pub use encoder::{FeatureBank, FeatureExtractor, FrozenEncoder, ENCODER_SEED, FEATURE_DIM};
pub use generate::{
    generate_dataset, image_shape, CountOverride, Dataset, DatasetConfig, SampleRecord, IMAGE_NUMEL,
    IMAGE_SIZE, NIGHT_BRIGHTNESS,
};
pub use manifest::{read_dataset, write_dataset, DatasetManifest, ManifestSample};
pub use partition::{partition, regroup, DomainGroup, DomainPartition};
pub use schema::{Attribute, AttributeSchema, SCENE, TIME, WEATHER};

/// Minimum domain size for per-domain specialisation (finetuning).
pub const MIN_SPECIALIZE_SAMPLES: usize = 16;
