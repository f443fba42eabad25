use std::path::Path;

use image::imageops::{self, FilterType};
use image::{DynamicImage, RgbImage};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::networks::{Domain, ImageBatch, Tensor, ValueRange};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interpolation {
    #[default]
    Bicubic,
    Nearest,
}

impl Interpolation {
    fn filter(self) -> FilterType {
        match self {
            Interpolation::Bicubic => FilterType::CatmullRom,
            Interpolation::Nearest => FilterType::Nearest,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    pub load_size: u32,
    pub crop_size: u32,
    pub normalize_to: ValueRange,
    /// Used for photographs; label maps are always resized with nearest neighbour.
    pub interpolation: Interpolation,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            load_size: 286,
            crop_size: 256,
            normalize_to: ValueRange::default(),
            interpolation: Interpolation::Bicubic,
        }
    }
}

impl PreprocessConfig {
    /// No resize margin: load and crop at `size`.
    pub fn fixed(size: u32) -> Self {
        PreprocessConfig {
            load_size: size,
            crop_size: size,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.crop_size == 0 || self.crop_size % 4 != 0 {
            return Err(Error::config("crop_size", format!("{} is not a positive multiple of 4", self.crop_size)));
        }
        if self.load_size < self.crop_size {
            return Err(Error::config(
                "load_size",
                format!("{} is smaller than crop_size {}", self.load_size, self.crop_size),
            ));
        }
        let r = self.normalize_to;
        if !(r.lo.is_finite() && r.hi.is_finite() && r.lo < r.hi) {
            return Err(Error::config("normalize_to", "needs lo < hi"));
        }
        Ok(())
    }
}

pub fn load_image(path: &Path) -> Result<DynamicImage> {
    image::open(path).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::Image {
            path: path.to_path_buf(),
            source: other,
        },
    })
}

/// Loads an 8-bit RGB image, rejecting other channel layouts.
pub fn load_rgb(path: &Path) -> Result<RgbImage> {
    let img = load_image(path)?;
    require_rgb(img).map_err(|e| match e {
        Error::Validation(msg) => Error::Validation(format!("{}: {msg}", path.display())),
        other => other,
    })
}

fn require_rgb(img: DynamicImage) -> Result<RgbImage> {
    match img {
        DynamicImage::ImageRgb8(rgb) => Ok(rgb),
        other => Err(Error::Validation(format!(
            "expected 3-channel 8-bit RGB, found {:?}",
            other.color()
        ))),
    }
}

fn resize(img: &RgbImage, size: u32, interpolation: Interpolation) -> RgbImage {
    if img.dimensions() == (size, size) {
        img.clone()
    } else {
        imageops::resize(img, size, size, interpolation.filter())
    }
}

/// Maps 8-bit values linearly onto `range`. The numerator stays an exact
/// integer for integral bounds, so `[-1, 1]` negation of `255 - p` is exact.
pub fn normalize_value(p: u8, range: ValueRange) -> f64 {
    let p = p as f64;
    (range.lo * (255.0 - p) + range.hi * p) / 255.0
}

pub fn denormalize_value(v: f64, range: ValueRange) -> u8 {
    ((v - range.lo) / (range.hi - range.lo) * 255.0).round().clamp(0.0, 255.0) as u8
}

pub fn image_to_batch(img: &RgbImage, domain: Domain, range: ValueRange) -> Result<ImageBatch> {
    let (w, h) = img.dimensions();
    let data = Tensor::from_shape_fn((1, 3, h as usize, w as usize), |(_, c, y, x)| {
        normalize_value(img.get_pixel(x as u32, y as u32)[c], range)
    });
    ImageBatch::with_range(data, domain, range)
}

/// First image of a batch back to 8-bit RGB. Expects 3 channels.
pub fn batch_to_image(batch: &ImageBatch, index: usize) -> RgbImage {
    let [_, _, h, w] = batch.shape();
    let d = batch.data();
    let range = batch.range();
    RgbImage::from_fn(w as u32, h as u32, |x, y| {
        image::Rgb([0, 1, 2].map(|c| denormalize_value(d[(index, c, y as usize, x as usize)], range)))
    })
}

/// Training-time preprocessing: resize to `load_size`, random crop to
/// `crop_size`, normalize.
pub fn preprocess<R: Rng + ?Sized>(
    image: &DynamicImage,
    domain: Domain,
    config: &PreprocessConfig,
    rng: &mut R,
) -> Result<ImageBatch> {
    config.validate()?;
    let rgb = require_rgb(image.clone())?;
    let cropped = random_crop(&rgb, config, config.interpolation, rng);
    image_to_batch(&cropped, domain, config.normalize_to)
}

pub(crate) fn random_crop<R: Rng + ?Sized>(
    rgb: &RgbImage,
    config: &PreprocessConfig,
    interpolation: Interpolation,
    rng: &mut R,
) -> RgbImage {
    let loaded = resize(rgb, config.load_size, interpolation);
    let margin = config.load_size - config.crop_size;
    let ox = rng.random_range(0..=margin);
    let oy = rng.random_range(0..=margin);
    if margin == 0 {
        return loaded;
    }
    imageops::crop_imm(&loaded, ox, oy, config.crop_size, config.crop_size).to_image()
}

/// Deterministic evaluation preprocessing: resize straight to `crop_size`.
pub fn preprocess_eval(image: &RgbImage, config: &PreprocessConfig, interpolation: Interpolation) -> Result<RgbImage> {
    config.validate()?;
    Ok(resize(image, config.crop_size, interpolation))
}
