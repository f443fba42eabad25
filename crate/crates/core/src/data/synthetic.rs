//! Procedural two-domain datasets with a known ground-truth mapping.
//!
//! * `color_inversion`: X holds smooth dark color blobs (channel values below
//!   128), Y is the per-channel negation (`255 - p`), which is exact negation
//!   after normalization. Keeping X dark makes the two domains separable.
//! * `region_texture`: X is a three-class flat-color region map, Y fills every
//!   region with a fixed per-class texture. Texture hues are deliberately not
//!   the hue of their own label, so a translator that merely preserves colors
//!   assigns wrong labels.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::DatasetManifest;
use crate::error::{Error, Result};
use crate::eval::{quantize_rgb, LabelMap, LabelPalette, PaletteEntry};
use crate::networks::Domain;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticTask {
    ColorInversion,
    RegionTexture,
}

impl SyntheticTask {
    pub fn as_str(self) -> &'static str {
        match self {
            SyntheticTask::ColorInversion => "color_inversion",
            SyntheticTask::RegionTexture => "region_texture",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticTaskSpec {
    pub resolution: u32,
    pub num_paired: usize,
    /// Unpaired images per domain.
    pub num_unpaired: usize,
    pub task: SyntheticTask,
    pub seed: u64,
}

impl Default for SyntheticTaskSpec {
    fn default() -> Self {
        SyntheticTaskSpec {
            resolution: 32,
            num_paired: 10,
            num_unpaired: 190,
            task: SyntheticTask::ColorInversion,
            seed: 7,
        }
    }
}

impl SyntheticTaskSpec {
    pub fn validate(&self) -> Result<()> {
        if self.resolution < 8 || self.resolution % 4 != 0 {
            return Err(Error::config(
                "resolution",
                format!("{} is not a multiple of 4 that is at least 8", self.resolution),
            ));
        }
        if self.num_paired + self.num_unpaired == 0 {
            return Err(Error::Validation("synthetic spec asks for zero samples".into()));
        }
        Ok(())
    }
}

const LABEL_COLORS: [[u8; 3]; 3] = [[128, 64, 128], [107, 142, 35], [70, 130, 180]];
const LABEL_NAMES: [&str; 3] = ["road", "vegetation", "sky"];
/// Mean texture color per class: class `c` borrows the label color of class `c + 1`.
const TEXTURE_COLORS: [[u8; 3]; 3] = [LABEL_COLORS[1], LABEL_COLORS[2], LABEL_COLORS[0]];
const TEXTURE_AMPLITUDE: i16 = 30;

// Inversion blobs share one color on a fixed background. Instance-normalized
// generators cannot see a global color offset or contrast scale, so random
// backgrounds or blob colors would make the mapping unrecoverable.
const BLOB_BACKGROUND: [u8; 3] = [8, 8, 8];
const BLOB_COLOR: [u8; 3] = [120, 72, 24];

pub fn region_label_palette() -> LabelPalette {
    LabelPalette::new(
        LABEL_COLORS
            .iter()
            .zip(LABEL_NAMES)
            .enumerate()
            .map(|(i, (&color, name))| PaletteEntry {
                class_id: i,
                color,
                name: name.to_string(),
            })
            .collect(),
    )
    .expect("static palette is valid")
}

/// Palette of mean texture colors; quantizing a Y image with it recovers the labels.
pub fn region_texture_palette() -> LabelPalette {
    LabelPalette::from_colors(&TEXTURE_COLORS).expect("static palette is valid")
}

fn shade(color: [u8; 3], light: bool) -> Rgb<u8> {
    let delta = if light { TEXTURE_AMPLITUDE } else { -TEXTURE_AMPLITUDE };
    Rgb(color.map(|c| (c as i16 + delta).clamp(0, 255) as u8))
}

/// Texture pixel for `class` at absolute position `(x, y)`.
pub fn texture_pixel(class: usize, x: u32, y: u32) -> Rgb<u8> {
    let light = match class {
        0 => (y / 2) % 2 == 0,           // horizontal stripes
        1 => ((x / 2) + (y / 2)) % 2 == 0, // 2x2 checkerboard
        _ => ((x + y) / 2) % 2 == 0,     // diagonal stripes
    };
    shade(TEXTURE_COLORS[class], light)
}

pub fn render_texture(labels: &LabelMap) -> RgbImage {
    RgbImage::from_fn(labels.width as u32, labels.height as u32, |x, y| {
        texture_pixel(labels.get(y as usize, x as usize), x, y)
    })
}

/// Inverse of the region-texture mapping.
pub fn recover_labels(texture: &RgbImage) -> LabelMap {
    quantize_rgb(texture, &region_texture_palette())
}

fn random_regions(rng: &mut ChaCha8Rng, size: u32) -> LabelMap {
    let mut classes = [0usize, 1, 2, 0, 1, 2];
    classes.shuffle(rng);
    let seeds: Vec<(f64, f64, usize)> = classes
        .iter()
        .map(|&c| (rng.random_range(0.0..size as f64), rng.random_range(0.0..size as f64), c))
        .collect();
    let s = size as usize;
    let ids = (0..s * s)
        .map(|i| {
            let (px, py) = ((i % s) as f64 + 0.5, (i / s) as f64 + 0.5);
            seeds
                .iter()
                .map(|&(sx, sy, c)| ((sx - px).powi(2) + (sy - py).powi(2), c))
                .min_by(|a, b| a.0.total_cmp(&b.0))
                .expect("non-empty seeds")
                .1
        })
        .collect();
    LabelMap {
        height: s,
        width: s,
        ids,
    }
}

fn random_dark_blobs(rng: &mut ChaCha8Rng, size: u32) -> RgbImage {
    let s = size as f64;
    let blobs: Vec<(f64, f64, f64, [f64; 3])> = (0..3)
        .map(|_| {
            let c = BLOB_COLOR.map(f64::from);
            (
                rng.random_range(0.0..s),
                rng.random_range(0.0..s),
                rng.random_range(s / 8.0..s / 4.0),
                c,
            )
        })
        .collect();
    RgbImage::from_fn(size, size, |x, y| {
        let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
        let mut weight = 0.5;
        let mut acc = BLOB_BACKGROUND.map(|v| f64::from(v) * 0.5);
        for &(cx, cy, sigma, c) in &blobs {
            let w = (-((px - cx).powi(2) + (py - cy).powi(2)) / (2.0 * sigma * sigma)).exp();
            weight += w;
            for k in 0..3 {
                acc[k] += w * c[k];
            }
        }
        Rgb(acc.map(|v| (v / weight).round().clamp(0.0, 255.0) as u8))
    })
}

/// Draws one aligned `(x, y)` sample of `task`.
pub fn draw_pair(task: SyntheticTask, rng: &mut ChaCha8Rng, size: u32) -> (RgbImage, RgbImage) {
    match task {
        SyntheticTask::ColorInversion => {
            let x = random_dark_blobs(rng, size);
            let mut y = x.clone();
            for p in y.pixels_mut() {
                p.0 = p.0.map(|v| 255 - v);
            }
            (x, y)
        }
        SyntheticTask::RegionTexture => {
            let labels = random_regions(rng, size);
            (region_label_palette().render(&labels), render_texture(&labels))
        }
    }
}

fn save(img: &RgbImage, path: &Path) -> Result<()> {
    img.save(path).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::Image {
            path: path.to_path_buf(),
            source: other,
        },
    })
}

/// Writes `x/`, `y/`, `manifest.txt` and `synthetic.toml` under `out_dir`.
/// Unpaired X and Y images come from independent draws.
pub fn generate_synthetic(spec: &SyntheticTaskSpec, out_dir: &Path) -> Result<DatasetManifest> {
    spec.validate()?;
    let (xd, yd) = (out_dir.join("x"), out_dir.join("y"));
    for d in [&xd, &yd] {
        std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let size = spec.resolution;
    let mut manifest = DatasetManifest::default();
    for i in 0..spec.num_paired {
        let (x, y) = draw_pair(spec.task, &mut rng, size);
        let (px, py) = (xd.join(format!("p{i:05}.png")), yd.join(format!("p{i:05}.png")));
        save(&x, &px)?;
        save(&y, &py)?;
        manifest.paired.push((px, py));
    }
    let unpaired = |dir: &Path, take_y: bool, rng: &mut ChaCha8Rng| -> Result<Vec<PathBuf>> {
        (0..spec.num_unpaired)
            .map(|j| {
                let (x, y) = draw_pair(spec.task, rng, size);
                let path = dir.join(format!("u{j:05}.png"));
                save(if take_y { &y } else { &x }, &path)?;
                Ok(path)
            })
            .collect()
    };
    manifest.unpaired_x = unpaired(&xd, false, &mut rng)?;
    manifest.unpaired_y = unpaired(&yd, true, &mut rng)?;
    if spec.task == SyntheticTask::RegionTexture {
        manifest.palette = Some(region_label_palette());
        manifest.label_domain = Some(Domain::X);
    }
    manifest.write(&out_dir.join("manifest.txt"))?;

    let mut meta = String::new();
    let _ = writeln!(meta, "task = \"{}\"", spec.task.as_str());
    let _ = writeln!(meta, "resolution = {}", spec.resolution);
    let _ = writeln!(meta, "num_paired = {}", spec.num_paired);
    let _ = writeln!(meta, "num_unpaired = {}", spec.num_unpaired);
    let _ = writeln!(meta, "seed = {}", spec.seed);
    let meta_path = out_dir.join("synthetic.toml");
    std::fs::write(&meta_path, meta).map_err(|e| Error::io(&meta_path, e))?;
    Ok(manifest)
}
