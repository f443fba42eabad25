#![allow(dead_code)]

use std::path::Path;

use hybridgan::data::synthetic::{generate_synthetic, SyntheticTask, SyntheticTaskSpec};
use hybridgan::networks::{DiscriminatorConfig, GeneratorConfig};
use hybridgan::{DatasetManifest, PreprocessConfig, TrainConfig};

/// Networks small enough that a step on 8x8 images takes well under a millisecond.
pub fn tiny_config(total_epochs: u32, paired_epochs: u32) -> TrainConfig {
    TrainConfig {
        total_epochs,
        paired_epochs,
        lr_constant_epochs: paired_epochs,
        seed: 11,
        generator: GeneratorConfig {
            base_filters: 2,
            num_resblocks: 1,
            ..Default::default()
        },
        discriminator: DiscriminatorConfig {
            layer_filters: vec![4, 4],
            layer_strides: vec![2, 1],
            ..Default::default()
        },
        preprocess: PreprocessConfig::fixed(8),
        pool_size: 3,
        ..Default::default()
    }
}

pub fn synthetic(dir: &Path, task: SyntheticTask, resolution: u32, paired: usize, unpaired: usize, seed: u64) -> DatasetManifest {
    generate_synthetic(
        &SyntheticTaskSpec {
            resolution,
            num_paired: paired,
            num_unpaired: unpaired,
            task,
            seed,
        },
        dir,
    )
    .expect("synthetic data")
}
