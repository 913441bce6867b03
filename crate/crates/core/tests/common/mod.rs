#![allow(dead_code)]

use std::path::PathBuf;

use rprm::corpus::{ingest_jsonl, k_core_filter, time_split, Dataset, FieldMap, SplitDataset, SplitRatios};
use rprm::encoder::{hash_encode, EmbeddingStore};
use rprm::eval::Interactions;
use rprm::learn::{LossConfig, OptimConfig, TrainConfig};
use rprm::model::{ModelConfig, Variant};
use rprm::props::{assemble, PropertyMatrix, ScorerConfig};

pub const EMBED_DIM: usize = 32;
pub const HASH_SEED: u64 = 7;

pub fn fixture_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/toy_reviews.jsonl")
}

pub struct Toy {
    pub ds: Dataset,
    pub split: SplitDataset,
    pub props: PropertyMatrix,
    pub embeds: EmbeddingStore,
    pub interactions: Interactions,
}

/// The bundled fixture run through ingest, 5-core, split, scoring and the
/// hashing encoder.
pub fn load_toy() -> Toy {
    let report = ingest_jsonl(&fixture_path(), &FieldMap::default()).expect("fixture parses");
    let ds = k_core_filter(&report.reviews, 5).expect("fixture survives 5-core");
    let split = time_split(&ds, SplitRatios::default()).expect("fixture splits");
    let props = assemble(&ds, &ScorerConfig::default()).expect("scores");
    let embeds = hash_encode(&ds, EMBED_DIM, HASH_SEED).expect("hash encoder");
    let interactions = Interactions::new(&ds, &split);
    Toy { ds, split, props, embeds, interactions }
}

/// Model size used for the desk-scale experiments.
pub fn desk_model(variant: Variant) -> ModelConfig {
    ModelConfig { variant, d_id: 8, filters: 32, window: 3, max_reviews: 12, init_std: 0.01 }
}

pub fn desk_train(loss: LossConfig) -> TrainConfig {
    TrainConfig {
        loss,
        optimizer: OptimConfig { learning_rate: 0.01, batch_size: 32, max_epochs: 40, patience: 5 },
        ..TrainConfig::default()
    }
}
