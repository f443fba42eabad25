//! Fixtures shared by the benchmarks.

use hybridgan::data::SampleCounts;
use hybridgan::networks::{DiscriminatorConfig, GeneratorConfig};
use hybridgan::{Domain, ImageBatch, PreprocessConfig, Tensor, TrainConfig};

/// The 32 px configuration the synthetic benchmarks train with.
pub fn desk_config() -> TrainConfig {
    TrainConfig {
        generator: GeneratorConfig {
            base_filters: 8,
            num_resblocks: 2,
            ..Default::default()
        },
        discriminator: DiscriminatorConfig {
            layer_filters: vec![16, 32, 32],
            layer_strides: vec![2, 2, 1],
            ..Default::default()
        },
        preprocess: PreprocessConfig::fixed(32),
        ..Default::default()
    }
}

pub fn counts() -> SampleCounts {
    SampleCounts {
        paired: 10,
        unpaired_x: 190,
        unpaired_y: 190,
    }
}

/// A smooth deterministic batch in `[-0.9, 0.9]`.
pub fn batch(domain: Domain, n: usize, size: usize) -> ImageBatch {
    let data = Tensor::from_shape_fn((n, 3, size, size), |(b, c, y, x)| {
        0.9 * ((x as f64 * 0.3 + y as f64 * 0.2 + c as f64 + b as f64).sin())
    });
    ImageBatch::new(data, domain).expect("values are in range")
}
