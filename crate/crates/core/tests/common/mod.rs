#![allow(dead_code)]

use l2aug::data::{prepare, InteractionDataset, SplitConfig};
use l2aug::recommender::{Architecture, ModelConfig};
use l2aug::synthetic::{generate_synthetic, SyntheticSpec};

pub fn tiny_spec(seed: u64) -> SyntheticSpec {
    SyntheticSpec {
        num_items: 40,
        num_clusters: 4,
        num_core_users: 20,
        core_length: 15,
        num_casual_users: 30,
        casual_walk_length: 15,
        seed,
        ..SyntheticSpec::default()
    }
}

pub fn dataset(spec: &SyntheticSpec) -> InteractionDataset {
    let data = generate_synthetic(spec).unwrap();
    prepare(InteractionDataset::from_events(&data.events), &SplitConfig::default()).unwrap()
}

pub fn tiny_dataset(seed: u64) -> InteractionDataset {
    dataset(&tiny_spec(seed))
}

pub fn model_config(architecture: Architecture, dim: usize, max_len: usize) -> ModelConfig {
    ModelConfig {
        architecture,
        dim,
        blocks: 2,
        max_len,
        feed_forward: true,
    }
}
