//! Dataset manifests, preprocessing, epoch sampling and synthetic benchmarks.

mod manifest;
mod preprocess;
mod sampler;
pub mod synthetic;

pub use manifest::{load_manifest, DatasetManifest, SampleCounts};
pub use preprocess::{
    batch_to_image, denormalize_value, image_to_batch, load_image, load_rgb, normalize_value, preprocess,
    preprocess_eval, Interpolation, PreprocessConfig,
};
pub(crate) use preprocess::random_crop;
pub use sampler::{iterate_epoch, Phase, Sample};
pub use synthetic::{generate_synthetic, SyntheticTask, SyntheticTaskSpec};
