#![allow(dead_code)]

use proxyrca::data::{generate_synthetic, InteractionDataset, SynthConfig};
use proxyrca::eval::{EvalConfig, Negatives};
use proxyrca::model::ModelConfig;
use proxyrca::train::TrainConfig;

pub fn tiny_dataset(seed: u64) -> InteractionDataset {
    let cfg = SynthConfig {
        user_count: 20,
        item_count: 10,
        cluster_count: 2,
        attribute_dim: 4,
        min_interactions: 4,
        max_interactions: 6,
        max_preferred_clusters: 1,
        ..SynthConfig::default()
    };
    generate_synthetic(&cfg, seed).unwrap()
}

pub fn tiny_model() -> ModelConfig {
    ModelConfig {
        d: 8,
        n_proxy: 4,
        k_frequent: 3,
        blocks: 1,
        heads: 2,
        max_len: 8,
        dropout: 0.0,
        ..ModelConfig::default()
    }
}

pub fn tiny_train() -> TrainConfig {
    TrainConfig {
        epochs: 5,
        batch_size: 8,
        n_negatives: 3,
        lr: 1e-2,
        ..TrainConfig::default()
    }
}

pub fn tiny_eval() -> EvalConfig {
    EvalConfig {
        negatives: Negatives::AllUnowned,
        n_groups: 2,
        ..EvalConfig::default()
    }
}
