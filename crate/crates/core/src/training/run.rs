use std::io::Write;
use std::path::PathBuf;

use ndarray::{concatenate, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{lr_at_epoch, save_checkpoint, training_step, NetId, TrainConfig, TrainState};
use crate::data::{image_to_batch, iterate_epoch, load_rgb, random_crop, DatasetManifest, Interpolation, Sample};
use crate::error::{Error, Result};
use crate::networks::{Domain, ImageBatch};

/// Side channels of a training run. Everything is optional.
#[derive(Default)]
pub struct TrainHooks<'a> {
    /// Receives `latest.ckpt` after every epoch and `final.ckpt` at the end.
    pub checkpoint_dir: Option<PathBuf>,
    /// One `key=value` line per step.
    pub log: Option<&'a mut dyn Write>,
    /// Called after each epoch's checkpoint; an error stops the run.
    pub on_epoch: Option<&'a mut dyn FnMut(&TrainState) -> Result<()>>,
}

/// Trains fresh networks on `manifest` for `config.total_epochs` epochs.
pub fn train(manifest: &DatasetManifest, config: &TrainConfig, hooks: TrainHooks) -> Result<TrainState> {
    config.validate()?;
    manifest.validate()?;
    let state = TrainState::new(config, manifest.counts())?;
    resume(state, manifest, config, hooks)
}

fn interpolation(manifest: &DatasetManifest, domain: Domain, config: &TrainConfig) -> Interpolation {
    if manifest.label_domain == Some(domain) {
        Interpolation::Nearest
    } else {
        config.preprocess.interpolation
    }
}

fn load_batch(
    samples: &[Sample],
    manifest: &DatasetManifest,
    config: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(ImageBatch, ImageBatch)> {
    let range = config.preprocess.normalize_to;
    let (ix, iy) = (interpolation(manifest, Domain::X, config), interpolation(manifest, Domain::Y, config));
    let mut xs = Vec::with_capacity(samples.len());
    let mut ys = Vec::with_capacity(samples.len());
    for s in samples {
        let (x, y) = (load_rgb(&s.x)?, load_rgb(&s.y)?);
        // Aligned pairs share crop offsets.
        let mut y_rng = rng.clone();
        let x = random_crop(&x, &config.preprocess, ix, rng);
        let y = if s.aligned {
            random_crop(&y, &config.preprocess, iy, &mut y_rng)
        } else {
            random_crop(&y, &config.preprocess, iy, rng)
        };
        xs.push(image_to_batch(&x, Domain::X, range)?.into_data());
        ys.push(image_to_batch(&y, Domain::Y, range)?.into_data());
    }
    let stack = |parts: &[crate::networks::Tensor]| {
        let views: Vec<_> = parts.iter().map(|t| t.view()).collect();
        concatenate(Axis(0), &views).expect("crops share a size")
    };
    Ok((
        ImageBatch::with_range(stack(&xs), Domain::X, range)?,
        ImageBatch::with_range(stack(&ys), Domain::Y, range)?,
    ))
}

/// Data-order generator for one epoch, independent of everything before it.
fn epoch_rng(seed: u64, epoch: u32) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    rng
}

/// Continues training from `state` up to `config.total_epochs`.
pub fn resume(mut state: TrainState, manifest: &DatasetManifest, config: &TrainConfig, mut hooks: TrainHooks) -> Result<TrainState> {
    config.validate()?;
    let counts = manifest.counts();
    if let Some(dir) = &hooks.checkpoint_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    for epoch in state.completed_epochs + 1..=config.total_epochs {
        state.begin_epoch(epoch, counts, config);
        let mut rng = epoch_rng(config.seed, epoch);
        let samples = iterate_epoch(manifest, state.phase, &mut rng, config.reuse_paired_images)?;
        let lrs: Vec<f64> = [NetId::G1, NetId::D3]
            .iter()
            .map(|&id| lr_at_epoch(config.optimizer(id), epoch, config))
            .collect::<Result<_>>()?;
        let mut epoch_loss = 0.0;
        for chunk in samples.chunks(config.batch_size) {
            let (x, y) = load_batch(chunk, manifest, config, &mut rng)?;
            let phase = state.phase;
            let report = training_step(&mut state, &x, &y, phase, config)?;
            epoch_loss += report.total_generator;
            if let Some(log) = hooks.log.as_mut() {
                writeln!(
                    log,
                    "epoch={epoch} step={} phase={} lr={:e} lr_conditional={:e} {report}",
                    state.global_step,
                    state.phase.as_str(),
                    lrs[0],
                    lrs[1]
                )
                .map_err(|e| Error::io("<training log>", e))?;
            }
        }
        state.completed_epochs = epoch;
        let steps = samples.len().div_ceil(config.batch_size).max(1);
        log::info!(
            "epoch {epoch}/{} ({}) mean generator loss {:.4}",
            config.total_epochs,
            state.phase.as_str(),
            epoch_loss / steps as f64
        );
        if let Some(dir) = &hooks.checkpoint_dir {
            save_checkpoint(&state, &dir.join("latest.ckpt"))?;
        }
        if let Some(cb) = hooks.on_epoch.as_mut() {
            cb(&state)?;
        }
    }
    if let Some(dir) = &hooks.checkpoint_dir {
        save_checkpoint(&state, &dir.join("final.ckpt"))?;
    }
    Ok(state)
}
