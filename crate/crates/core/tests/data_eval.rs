//! Synthetic datasets and the evaluation pipeline, checked against oracles
//! that know the ground-truth mapping.

mod common;

use hybridgan::data::synthetic::{recover_labels, region_label_palette, render_texture, SyntheticTask};
use hybridgan::data::{batch_to_image, image_to_batch, load_manifest, load_rgb, normalize_value};
use hybridgan::eval::{
    evaluate_translation, quantize_rgb, Direction, EvalMode, EvalOptions, IdentityTranslator, LabelMap, Segmenter,
    Translator,
};
use hybridgan::networks::ValueRange;
use hybridgan::{Domain, Error, ImageBatch, LabelPalette, PreprocessConfig, Result};

use common::synthetic;

fn options<'a>(direction: Direction, mode: EvalMode, palette: &'a LabelPalette, segmenter: Option<&'a dyn Segmenter>) -> EvalOptions<'a> {
    EvalOptions {
        direction,
        mode,
        palette: Some(palette),
        segmenter,
        preprocess: PreprocessConfig::fixed(16),
        grid_dir: None,
    }
}

#[test]
fn synthetic_counts_and_manifest_on_disk() {
    let tmp = tempfile::tempdir().unwrap();
    let m = synthetic(tmp.path(), SyntheticTask::ColorInversion, 32, 10, 190, 7);
    assert_eq!((m.paired.len(), m.unpaired_x.len(), m.unpaired_y.len()), (10, 190, 190));
    assert!(m.all_paths().all(|p| p.exists()));
    assert_eq!(load_manifest(&tmp.path().join("manifest.txt")).unwrap(), m);
    let img = load_rgb(&m.unpaired_y[0]).unwrap();
    assert_eq!(img.dimensions(), (32, 32));
}

#[test]
fn synthetic_generation_is_seeded() {
    let (a, b, c) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ma = synthetic(a.path(), SyntheticTask::RegionTexture, 16, 2, 2, 3);
    let mb = synthetic(b.path(), SyntheticTask::RegionTexture, 16, 2, 2, 3);
    let mc = synthetic(c.path(), SyntheticTask::RegionTexture, 16, 2, 2, 4);
    let bytes = |p: &std::path::Path| std::fs::read(p).unwrap();
    assert_eq!(bytes(&ma.paired[1].1), bytes(&mb.paired[1].1));
    assert_ne!(bytes(&ma.paired[1].1), bytes(&mc.paired[1].1));
}

#[test]
fn inversion_targets_are_exact_negations() {
    let tmp = tempfile::tempdir().unwrap();
    let m = synthetic(tmp.path(), SyntheticTask::ColorInversion, 16, 6, 0, 2);
    let unit = ValueRange::default();
    for (px, py) in &m.paired {
        let x = image_to_batch(&load_rgb(px).unwrap(), Domain::X, unit).unwrap();
        let y = image_to_batch(&load_rgb(py).unwrap(), Domain::Y, unit).unwrap();
        assert_eq!(y.data(), &x.data().mapv(|v| -v));
    }
    assert_eq!(normalize_value(0, unit), -1.0);
}

#[test]
fn region_textures_encode_their_label_maps() {
    let tmp = tempfile::tempdir().unwrap();
    let m = synthetic(tmp.path(), SyntheticTask::RegionTexture, 16, 6, 0, 2);
    assert_eq!(m.label_domain, Some(Domain::X));
    let palette = m.palette.clone().unwrap();
    for (px, py) in &m.paired {
        let labels = quantize_rgb(&load_rgb(px).unwrap(), &palette);
        assert_eq!(recover_labels(&load_rgb(py).unwrap()), labels);
        assert_eq!(load_rgb(py).unwrap(), render_texture(&labels));
    }
}

/// Knows the texture rule: turns label maps into their textures.
struct TextureOracle(LabelPalette);

impl Translator for TextureOracle {
    fn translate(&self, input: &ImageBatch) -> Result<ImageBatch> {
        let labels = quantize_rgb(&batch_to_image(input, 0), &self.0);
        image_to_batch(&render_texture(&labels), Domain::Y, input.range())
    }
}

/// Knows the inverse rule: reads label maps back out of textures.
struct RecoveringSegmenter;

impl Segmenter for RecoveringSegmenter {
    fn segment(&self, images: &[(String, image::RgbImage)], _: &LabelPalette) -> Result<Vec<LabelMap>> {
        Ok(images.iter().map(|(_, img)| recover_labels(img)).collect())
    }
}

/// Paints every output pixel with one palette color.
struct Constant([u8; 3]);

impl Translator for Constant {
    fn translate(&self, input: &ImageBatch) -> Result<ImageBatch> {
        let [_, _, h, w] = input.shape();
        let img = image::RgbImage::from_pixel(w as u32, h as u32, image::Rgb(self.0));
        image_to_batch(&img, input.domain().flip(), input.range())
    }
}

#[test]
fn oracle_translators_score_perfectly() {
    let tmp = tempfile::tempdir().unwrap();
    let m = synthetic(tmp.path(), SyntheticTask::RegionTexture, 16, 5, 0, 8);
    let palette = region_label_palette();

    let to_photo = evaluate_translation(
        &TextureOracle(palette.clone()),
        &m,
        &options(Direction::XToY, EvalMode::LabelToPhoto, &palette, Some(&RecoveringSegmenter)),
    )
    .unwrap();
    let mt = to_photo.metrics;
    assert_eq!((mt.pixel_accuracy, mt.mean_accuracy, mt.mean_iu), (1.0, 1.0, 1.0));
    assert_eq!(to_photo.images.len(), 5);

    // Labels on both sides: identity is the perfect photo -> label translator.
    let mut same = m.clone();
    same.paired = m.paired.iter().map(|(x, _)| (x.clone(), x.clone())).collect();
    let r = evaluate_translation(&IdentityTranslator, &same, &options(Direction::XToY, EvalMode::PhotoToLabel, &palette, None)).unwrap();
    assert_eq!(r.metrics.mean_iu, 1.0);
}

#[test]
fn color_preserving_translation_gets_every_label_wrong() {
    let tmp = tempfile::tempdir().unwrap();
    let m = synthetic(tmp.path(), SyntheticTask::RegionTexture, 16, 5, 0, 9);
    let palette = region_label_palette();
    let r = evaluate_translation(&IdentityTranslator, &m, &options(Direction::YToX, EvalMode::PhotoToLabel, &palette, None)).unwrap();
    assert_eq!(r.metrics.pixel_accuracy, 0.0);
    assert_eq!(r.metrics.mean_iu, 0.0);
}

#[test]
fn constant_prediction_matches_hand_computed_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    let m = synthetic(tmp.path(), SyntheticTask::RegionTexture, 16, 4, 0, 10);
    let palette = region_label_palette();
    let r = evaluate_translation(
        &Constant(palette.color(0)),
        &m,
        &options(Direction::YToX, EvalMode::PhotoToLabel, &palette, None),
    )
    .unwrap();
    let mut counts = [0u64; 3];
    for (px, _) in &m.paired {
        for id in quantize_rgb(&load_rgb(px).unwrap(), &palette).ids {
            counts[id] += 1;
        }
    }
    let total: u64 = counts.iter().sum();
    let share = counts[0] as f64 / total as f64;
    let present = counts.iter().filter(|&&c| c > 0).count() as f64;
    assert!((r.metrics.pixel_accuracy - share).abs() < 1e-12);
    assert!((r.metrics.mean_accuracy - 1.0 / present).abs() < 1e-12);
    // Class 0's IU is its share of the image; every other class scores zero.
    assert!((r.metrics.mean_iu - share / present).abs() < 1e-12);
    assert_eq!(r.confusion.total(), total);
}

#[test]
fn evaluation_requires_its_inputs() {
    let tmp = tempfile::tempdir().unwrap();
    let m = synthetic(tmp.path(), SyntheticTask::RegionTexture, 16, 2, 0, 1);
    let palette = region_label_palette();
    let mut opts = options(Direction::XToY, EvalMode::LabelToPhoto, &palette, None);
    assert!(matches!(
        evaluate_translation(&IdentityTranslator, &m, &opts),
        Err(Error::Config { field: "segmenter", .. })
    ));
    opts.palette = None;
    opts.mode = EvalMode::PhotoToLabel;
    assert!(matches!(
        evaluate_translation(&IdentityTranslator, &m, &opts),
        Err(Error::Config { field: "palette", .. })
    ));
    let mut empty = m.clone();
    empty.paired.clear();
    assert!(evaluate_translation(&IdentityTranslator, &empty, &options(Direction::XToY, EvalMode::PhotoToLabel, &palette, None)).is_err());
}

#[test]
fn grids_are_written_per_image() {
    let tmp = tempfile::tempdir().unwrap();
    let m = synthetic(&tmp.path().join("d"), SyntheticTask::RegionTexture, 16, 3, 0, 1);
    let palette = region_label_palette();
    let grid_dir = tmp.path().join("grids");
    let mut opts = options(Direction::YToX, EvalMode::PhotoToLabel, &palette, None);
    opts.grid_dir = Some(grid_dir.clone());
    evaluate_translation(&IdentityTranslator, &m, &opts).unwrap();
    let grid = load_rgb(&grid_dir.join("00002.png")).unwrap();
    assert_eq!(grid.dimensions(), (48, 16));
}
