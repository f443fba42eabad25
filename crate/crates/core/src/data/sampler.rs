use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::DatasetManifest;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Paired,
    Unpaired,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Paired => "paired",
            Phase::Unpaired => "unpaired",
        }
    }
}

/// One training tuple. `aligned` is true only for paired-phase samples.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sample {
    pub x: PathBuf,
    pub y: PathBuf,
    pub aligned: bool,
}

/// Sample order for one epoch.
///
/// The paired phase yields every pair once, shuffled. The unpaired phase
/// shuffles each side independently and yields `max(len_x, len_y)` tuples,
/// wrapping the shorter side. With `reuse_paired`, paired images join both
/// unpaired pools as singletons.
pub fn iterate_epoch<R: Rng + ?Sized>(
    manifest: &DatasetManifest,
    phase: Phase,
    rng: &mut R,
    reuse_paired: bool,
) -> Result<Vec<Sample>> {
    match phase {
        Phase::Paired => {
            if manifest.paired.is_empty() {
                return Err(Error::Phase("paired phase requires at least one aligned pair".into()));
            }
            let mut order: Vec<usize> = (0..manifest.paired.len()).collect();
            order.shuffle(rng);
            Ok(order
                .into_iter()
                .map(|i| {
                    let (x, y) = &manifest.paired[i];
                    Sample {
                        x: x.clone(),
                        y: y.clone(),
                        aligned: true,
                    }
                })
                .collect())
        }
        Phase::Unpaired => {
            let reused = |side: fn(&(PathBuf, PathBuf)) -> &PathBuf| {
                manifest
                    .paired
                    .iter()
                    .filter(move |_| reuse_paired)
                    .map(side)
                    .cloned()
            };
            let mut xs: Vec<PathBuf> = manifest.unpaired_x.iter().cloned().chain(reused(|p| &p.0)).collect();
            let mut ys: Vec<PathBuf> = manifest.unpaired_y.iter().cloned().chain(reused(|p| &p.1)).collect();
            if xs.is_empty() || ys.is_empty() {
                return Err(Error::Phase(format!(
                    "unpaired phase needs images on both sides (x: {}, y: {})",
                    xs.len(),
                    ys.len()
                )));
            }
            xs.shuffle(rng);
            ys.shuffle(rng);
            let n = xs.len().max(ys.len());
            Ok((0..n)
                .map(|i| Sample {
                    x: xs[i % xs.len()].clone(),
                    y: ys[i % ys.len()].clone(),
                    aligned: false,
                })
                .collect())
        }
    }
}
