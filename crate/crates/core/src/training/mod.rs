//! Two-phase optimization: aligned pairs first, then unaligned samples, with
//! per-network Adam state, learning-rate schedules, image pools and
//! checkpoints.

mod checkpoint;
mod optim;
mod pool;
mod run;
mod step;

use std::fmt;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_VERSION};
pub use optim::{AdamState, OptimizerSpec, Schedule};
pub use pool::{ImagePool, PoolEntry};
pub use run::{resume, train, TrainHooks};
pub use step::{
    discriminator_pass, generator_pass, training_step, training_step_paired, training_step_unpaired,
    GeneratorOptions, GeneratorPass,
};

use crate::data::{Phase, PreprocessConfig, SampleCounts};
use crate::error::{Error, Result};
use crate::losses::{FeatureExtractor, LossWeights};
use crate::networks::{build_discriminator, build_generator, DiscriminatorConfig, GeneratorConfig, NetworkParameters};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub total_epochs: u32,
    pub paired_epochs: u32,
    pub lr_constant_epochs: u32,
    pub batch_size: usize,
    pub seed: u64,
    pub weights: LossWeights,
    /// Architecture of G1 (`X -> Y`); G2 mirrors its channel counts.
    pub generator: GeneratorConfig,
    /// Layer stack shared by all four discriminators; channel counts are set per role.
    pub discriminator: DiscriminatorConfig,
    pub preprocess: PreprocessConfig,
    /// G1, G2, D1 and D2.
    pub main_optimizer: OptimizerSpec,
    /// D3 and D4.
    pub conditional_optimizer: OptimizerSpec,
    pub pool_size: usize,
    pub reset_moments_at_phase_boundary: bool,
    /// Add aligned images to the unaligned pools after the paired phase.
    pub reuse_paired_images: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            total_epochs: 200,
            paired_epochs: 50,
            lr_constant_epochs: 100,
            batch_size: 1,
            seed: 0,
            weights: LossWeights::default(),
            generator: GeneratorConfig::default(),
            discriminator: DiscriminatorConfig::default(),
            preprocess: PreprocessConfig::default(),
            main_optimizer: OptimizerSpec::generator(),
            conditional_optimizer: OptimizerSpec::conditional(),
            pool_size: 50,
            reset_moments_at_phase_boundary: false,
            reuse_paired_images: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.total_epochs == 0 {
            return Err(Error::config("total_epochs", "must be at least 1"));
        }
        if self.paired_epochs > self.lr_constant_epochs {
            return Err(Error::config(
                "paired_epochs",
                format!("{} exceeds lr_constant_epochs {}", self.paired_epochs, self.lr_constant_epochs),
            ));
        }
        if self.lr_constant_epochs > self.total_epochs {
            return Err(Error::config(
                "lr_constant_epochs",
                format!("{} exceeds total_epochs {}", self.lr_constant_epochs, self.total_epochs),
            ));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be at least 1"));
        }
        self.weights.validate()?;
        self.generator.validate()?;
        self.discriminator.validate()?;
        self.preprocess.validate()?;
        self.main_optimizer.validate()?;
        self.conditional_optimizer.validate()?;
        if self.discriminator.output_size(self.preprocess.crop_size as usize, self.preprocess.crop_size as usize).is_none() {
            return Err(Error::config(
                "discriminator",
                format!("crop_size {} is too small for {}", self.preprocess.crop_size, self.discriminator.describe()),
            ));
        }
        Ok(())
    }

    /// Phase of a 1-based epoch for a dataset with the given counts.
    pub fn phase_for_epoch(&self, epoch: u32, counts: SampleCounts) -> Phase {
        if counts.paired == 0 {
            Phase::Unpaired
        } else if counts.is_fully_paired() || epoch <= self.paired_epochs {
            Phase::Paired
        } else {
            Phase::Unpaired
        }
    }

    pub fn optimizer(&self, net: NetId) -> &OptimizerSpec {
        match net {
            NetId::D3 | NetId::D4 => &self.conditional_optimizer,
            _ => &self.main_optimizer,
        }
    }

    fn generator_configs(&self) -> (GeneratorConfig, GeneratorConfig) {
        let g1 = self.generator.clone();
        let g2 = GeneratorConfig {
            input_channels: g1.output_channels,
            output_channels: g1.input_channels,
            ..g1.clone()
        };
        (g1, g2)
    }

    /// Configurations of D1 (judges Y), D2 (judges X), D3 (X image given a Y
    /// condition) and D4 (Y image given an X condition).
    pub fn discriminator_configs(&self) -> [DiscriminatorConfig; 4] {
        let (cx, cy) = (self.generator.input_channels, self.generator.output_channels);
        let with = |image, condition| DiscriminatorConfig {
            input_channels: image,
            condition_channels: condition,
            ..self.discriminator.clone()
        };
        [with(cy, 0), with(cx, 0), with(cx, cy), with(cy, cx)]
    }
}

/// Learning rate of `spec` at a 1-based epoch under `config`'s epoch counts.
pub fn lr_at_epoch(spec: &OptimizerSpec, epoch: u32, config: &TrainConfig) -> Result<f64> {
    optim::scheduled_lr(spec, epoch, config.lr_constant_epochs, config.total_epochs)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum NetId {
    G1,
    G2,
    D1,
    D2,
    D3,
    D4,
}

impl NetId {
    pub const ALL: [NetId; 6] = [NetId::G1, NetId::G2, NetId::D1, NetId::D2, NetId::D3, NetId::D4];

    pub fn name(self) -> &'static str {
        match self {
            NetId::G1 => "g1",
            NetId::G2 => "g2",
            NetId::D1 => "d1",
            NetId::D2 => "d2",
            NetId::D3 => "d3",
            NetId::D4 => "d4",
        }
    }
}

/// One value per network.
#[derive(Clone, Debug, PartialEq)]
pub struct PerNetwork<T> {
    pub g1: T,
    pub g2: T,
    pub d1: T,
    pub d2: T,
    pub d3: T,
    pub d4: T,
}

impl<T> PerNetwork<T> {
    pub fn from_fn(mut f: impl FnMut(NetId) -> T) -> Self {
        PerNetwork {
            g1: f(NetId::G1),
            g2: f(NetId::G2),
            d1: f(NetId::D1),
            d2: f(NetId::D2),
            d3: f(NetId::D3),
            d4: f(NetId::D4),
        }
    }

    pub fn try_from_fn(mut f: impl FnMut(NetId) -> Result<T>) -> Result<Self> {
        Ok(PerNetwork {
            g1: f(NetId::G1)?,
            g2: f(NetId::G2)?,
            d1: f(NetId::D1)?,
            d2: f(NetId::D2)?,
            d3: f(NetId::D3)?,
            d4: f(NetId::D4)?,
        })
    }

    pub fn get(&self, id: NetId) -> &T {
        match id {
            NetId::G1 => &self.g1,
            NetId::G2 => &self.g2,
            NetId::D1 => &self.d1,
            NetId::D2 => &self.d2,
            NetId::D3 => &self.d3,
            NetId::D4 => &self.d4,
        }
    }

    pub fn get_mut(&mut self, id: NetId) -> &mut T {
        match id {
            NetId::G1 => &mut self.g1,
            NetId::G2 => &mut self.g2,
            NetId::D1 => &mut self.d1,
            NetId::D2 => &mut self.d2,
            NetId::D3 => &mut self.d3,
            NetId::D4 => &mut self.d4,
        }
    }
}

pub type Networks = PerNetwork<NetworkParameters>;

impl Networks {
    /// Fresh networks; each draws its initialization from its own seed derived from `seed`.
    pub fn build(config: &TrainConfig, seed: u64) -> Result<Self> {
        let mut seeder = ChaCha8Rng::seed_from_u64(seed);
        let seeds: Vec<u64> = (0..6).map(|_| rand::Rng::random(&mut seeder)).collect();
        let (g1, g2) = config.generator_configs();
        let [d1, d2, d3, d4] = config.discriminator_configs();
        Ok(PerNetwork {
            g1: build_generator(&g1, seeds[0])?,
            g2: build_generator(&g2, seeds[1])?,
            d1: build_discriminator(&d1, seeds[2])?,
            d2: build_discriminator(&d2, seeds[3])?,
            d3: build_discriminator(&d3, seeds[4])?,
            d4: build_discriminator(&d4, seeds[5])?,
        })
    }
}

/// Discriminator pools in D1..D4 order. D3 and D4 pools keep conditions.
#[derive(Clone, Debug, PartialEq)]
pub struct Pools {
    pub d1: ImagePool,
    pub d2: ImagePool,
    pub d3: ImagePool,
    pub d4: ImagePool,
}

impl Pools {
    pub fn new(capacity: usize) -> Self {
        Pools {
            d1: ImagePool::new(capacity),
            d2: ImagePool::new(capacity),
            d3: ImagePool::new(capacity),
            d4: ImagePool::new(capacity),
        }
    }

    pub(crate) fn named(&self) -> [(&'static str, &ImagePool); 4] {
        [("d1", &self.d1), ("d2", &self.d2), ("d3", &self.d3), ("d4", &self.d4)]
    }
}

/// Optional perceptual term: a feature extractor plus per-layer weights.
#[derive(Clone)]
pub struct Perceptual {
    pub extractor: Arc<dyn FeatureExtractor>,
    pub layer_weights: Vec<f64>,
}

impl fmt::Debug for Perceptual {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Perceptual").field("layer_weights", &self.layer_weights).finish()
    }
}

/// Everything needed to continue training exactly where it stopped.
#[derive(Clone, Debug)]
pub struct TrainState {
    /// Epoch the next step belongs to (1-based).
    pub epoch: u32,
    pub completed_epochs: u32,
    pub phase: Phase,
    pub global_step: u64,
    pub networks: Networks,
    pub optimizers: PerNetwork<AdamState>,
    pub pools: Pools,
    /// Drives pool decisions.
    pub rng: ChaCha8Rng,
    pub identity_enabled: bool,
    /// Not stored in checkpoints.
    pub perceptual: Option<Perceptual>,
}

impl PartialEq for TrainState {
    fn eq(&self, other: &Self) -> bool {
        self.epoch == other.epoch
            && self.completed_epochs == other.completed_epochs
            && self.phase == other.phase
            && self.global_step == other.global_step
            && self.networks == other.networks
            && self.optimizers == other.optimizers
            && self.pools == other.pools
            && self.rng == other.rng
            && self.identity_enabled == other.identity_enabled
    }
}

impl TrainState {
    pub fn new(config: &TrainConfig, counts: SampleCounts) -> Result<Self> {
        config.validate()?;
        let networks = Networks::build(config, config.seed)?;
        let optimizers = PerNetwork::from_fn(|id| AdamState::new(networks.get(id)));
        let identity_enabled = config.generator.input_channels == config.generator.output_channels;
        if !identity_enabled {
            log::warn!(
                "identity term disabled: X has {} channels, Y has {}",
                config.generator.input_channels,
                config.generator.output_channels
            );
        }
        let mut pool_rng = ChaCha8Rng::seed_from_u64(config.seed);
        pool_rng.set_stream(u64::MAX);
        Ok(TrainState {
            epoch: 1,
            completed_epochs: 0,
            phase: config.phase_for_epoch(1, counts),
            global_step: 0,
            networks,
            optimizers,
            pools: Pools::new(config.pool_size),
            rng: pool_rng,
            identity_enabled,
            perceptual: None,
        })
    }

    /// Moves to `epoch`, switching phase when the schedule says so.
    pub fn begin_epoch(&mut self, epoch: u32, counts: SampleCounts, config: &TrainConfig) {
        let phase = config.phase_for_epoch(epoch, counts);
        if phase != self.phase && config.reset_moments_at_phase_boundary {
            for id in NetId::ALL {
                self.optimizers.get_mut(id).reset();
            }
        }
        self.epoch = epoch;
        self.phase = phase;
    }
}
