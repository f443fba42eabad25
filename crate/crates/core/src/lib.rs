//! Image-to-image translation from any mixture of aligned and unaligned
//! samples.
//!
//! Two generators (`G1: X -> Y`, `G2: Y -> X`) are trained against four
//! PatchGAN discriminators. D1 and D2 judge realism in each domain. The
//! conditional discriminators D3 and D4 switch role with the sample type: on
//! aligned pairs they compare a translation against its ground truth, on
//! unaligned samples they judge whether a cycle reconstruction matches its
//! source.

pub mod data;
pub mod error;
pub mod eval;
pub mod losses;
pub mod networks;
pub mod training;

pub use error::{Error, Result};
pub use data::{DatasetManifest, Phase, PreprocessConfig};
pub use eval::{ConfusionMatrix, EvalReport, LabelPalette, Metrics};
pub use losses::{LossReport, LossWeights, Term};
pub use networks::{
    build_discriminator, build_generator, discriminator_forward, generator_forward, receptive_field,
    DiscriminatorConfig, Domain, GeneratorConfig, ImageBatch, NetworkParameters, PatchMap, Tensor,
};
pub use training::{load_checkpoint, save_checkpoint, train, ImagePool, OptimizerSpec, TrainConfig, TrainState};
