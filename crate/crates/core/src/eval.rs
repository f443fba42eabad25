//! Label-map quantization and segmentation metrics (pixel accuracy, mean
//! accuracy, mean IU), plus the translation evaluation driver.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::Command;

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::data::{image_to_batch, load_rgb, preprocess_eval, DatasetManifest, Interpolation, PreprocessConfig};
use crate::error::{Error, Result};
use crate::networks::{generator_forward, Domain, ImageBatch, NetworkParameters, Tensor, ValueRange};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PaletteEntry {
    pub class_id: usize,
    pub color: [u8; 3],
    pub name: String,
}

/// Ordered class list with display colors. Class ids are `0..K` without gaps.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelPalette {
    entries: Vec<PaletteEntry>,
}

impl LabelPalette {
    pub fn new(entries: Vec<PaletteEntry>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::config("palette", "needs at least one class"));
        }
        for (i, e) in entries.iter().enumerate() {
            if e.class_id != i {
                return Err(Error::config(
                    "palette",
                    format!("class ids must be 0..K in order; entry {i} has id {}", e.class_id),
                ));
            }
            if entries[..i].iter().any(|o| o.color == e.color) {
                return Err(Error::config(
                    "palette",
                    format!("color {:?} of class {i} is used twice", e.color),
                ));
            }
        }
        Ok(LabelPalette { entries })
    }

    pub fn from_colors(colors: &[[u8; 3]]) -> Result<Self> {
        Self::new(
            colors
                .iter()
                .enumerate()
                .map(|(i, &color)| PaletteEntry {
                    class_id: i,
                    color,
                    name: format!("class{i}"),
                })
                .collect(),
        )
    }

    pub fn entries(&self) -> &[PaletteEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn color(&self, class_id: usize) -> [u8; 3] {
        self.entries[class_id].color
    }

    /// Nearest palette class in Euclidean RGB distance; ties go to the lower id.
    pub fn nearest(&self, rgb: [f64; 3]) -> usize {
        let mut best = (f64::INFINITY, 0);
        for e in &self.entries {
            let d: f64 = (0..3).map(|c| (rgb[c] - e.color[c] as f64).powi(2)).sum();
            if d < best.0 {
                best = (d, e.class_id);
            }
        }
        best.1
    }

    pub fn render(&self, labels: &LabelMap) -> RgbImage {
        RgbImage::from_fn(labels.width as u32, labels.height as u32, |x, y| {
            Rgb(self.color(labels.get(y as usize, x as usize)))
        })
    }
}

/// Per-pixel class ids, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    pub height: usize,
    pub width: usize,
    pub ids: Vec<usize>,
}

impl LabelMap {
    pub fn new(height: usize, width: usize, ids: Vec<usize>) -> Result<Self> {
        if ids.len() != height * width {
            return Err(Error::shape("label map", &[height * width], &[ids.len()]));
        }
        Ok(LabelMap { height, width, ids })
    }

    pub fn get(&self, row: usize, col: usize) -> usize {
        self.ids[row * self.width + col]
    }
}

/// Assigns every pixel of every image in the batch to its nearest palette class.
pub fn quantize_labels(image: &ImageBatch, palette: &LabelPalette) -> Result<Vec<LabelMap>> {
    if palette.is_empty() {
        return Err(Error::config("palette", "empty palette"));
    }
    let [n, c, h, w] = image.shape();
    if c != 3 {
        return Err(Error::shape("quantize_labels", &[n, 3, h, w], &[n, c, h, w]));
    }
    let ValueRange { lo, hi } = image.range();
    let scale = 255.0 / (hi - lo);
    let data = image.data();
    (0..n)
        .map(|b| {
            let ids = (0..h * w)
                .map(|i| {
                    let (row, col) = (i / w, i % w);
                    let rgb = [0, 1, 2].map(|ch| (data[(b, ch, row, col)] - lo) * scale);
                    palette.nearest(rgb)
                })
                .collect();
            LabelMap::new(h, w, ids)
        })
        .collect()
}

pub fn quantize_rgb(image: &RgbImage, palette: &LabelPalette) -> LabelMap {
    let ids = image.pixels().map(|p| palette.nearest(p.0.map(f64::from))).collect();
    LabelMap {
        height: image.height() as usize,
        width: image.width() as usize,
        ids,
    }
}

/// `counts[i * K + j]` = pixels of true class `i` predicted as class `j`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Metrics {
    pub pixel_accuracy: f64,
    pub mean_accuracy: f64,
    pub mean_iu: f64,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        ConfusionMatrix {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn from_counts(rows: &[Vec<u64>]) -> Result<Self> {
        let k = rows.len();
        if rows.iter().any(|r| r.len() != k) {
            return Err(Error::Validation("confusion matrix must be square".into()));
        }
        Ok(ConfusionMatrix {
            classes: k,
            counts: rows.concat(),
        })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn count(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.classes + predicted]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn accumulate(&mut self, predicted: &LabelMap, truth: &LabelMap) -> Result<()> {
        if (predicted.height, predicted.width) != (truth.height, truth.width) {
            return Err(Error::shape(
                "accumulate",
                &[truth.height, truth.width],
                &[predicted.height, predicted.width],
            ));
        }
        let k = self.classes;
        if let Some(bad) = predicted.ids.iter().chain(&truth.ids).find(|&&id| id >= k) {
            return Err(Error::Validation(format!("class id {bad} outside 0..{k}")));
        }
        for (&p, &t) in predicted.ids.iter().zip(&truth.ids) {
            self.counts[t * k + p] += 1;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.classes != self.classes {
            return Err(Error::shape("merge", &[self.classes], &[other.classes]));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    /// Per-class `(true count t_i, predicted count p_i, correct n_ii)`.
    pub fn class_totals(&self) -> Vec<(u64, u64, u64)> {
        let k = self.classes;
        (0..k)
            .map(|i| {
                let t = (0..k).map(|j| self.count(i, j)).sum();
                let p = (0..k).map(|j| self.count(j, i)).sum();
                (t, p, self.count(i, i))
            })
            .collect()
    }

    /// Class averages skip classes whose denominator is zero.
    pub fn metrics(&self) -> Result<Metrics> {
        let total = self.total();
        if total == 0 {
            return Err(Error::Validation("confusion matrix is empty".into()));
        }
        let totals = self.class_totals();
        let correct: u64 = totals.iter().map(|t| t.2).sum();
        let mean = |vals: Vec<f64>| vals.iter().sum::<f64>() / vals.len() as f64;
        let acc = totals
            .iter()
            .filter(|t| t.0 > 0)
            .map(|&(t, _, n)| n as f64 / t as f64)
            .collect();
        let iu = totals
            .iter()
            .filter(|&&(t, p, n)| t + p - n > 0)
            .map(|&(t, p, n)| n as f64 / (t + p - n) as f64)
            .collect();
        Ok(Metrics {
            pixel_accuracy: correct as f64 / total as f64,
            mean_accuracy: mean(acc),
            mean_iu: mean(iu),
        })
    }
}

/// Anything that maps a batch of images from one domain to the other.
pub trait Translator {
    fn translate(&self, input: &ImageBatch) -> Result<ImageBatch>;
}

impl Translator for NetworkParameters {
    fn translate(&self, input: &ImageBatch) -> Result<ImageBatch> {
        generator_forward(self, input)
    }
}

/// Passes images through unchanged. Useful as an evaluation baseline.
pub struct IdentityTranslator;

impl Translator for IdentityTranslator {
    fn translate(&self, input: &ImageBatch) -> Result<ImageBatch> {
        ImageBatch::with_range(input.data().clone(), input.domain().flip(), input.range())
    }
}

/// Produces label maps from generated photographs (label -> photo scoring).
pub trait Segmenter {
    fn segment(&self, images: &[(String, RgbImage)], palette: &LabelPalette) -> Result<Vec<LabelMap>>;
}

/// Adapter around an external program invoked as `program [args..] <in_dir>
/// <out_dir>`. The program must write a same-named PNG for every input image,
/// colored with the palette.
#[derive(Clone, Debug)]
pub struct ExternalSegmenter {
    pub program: PathBuf,
    pub args: Vec<String>,
    pub work_dir: PathBuf,
}

impl Segmenter for ExternalSegmenter {
    fn segment(&self, images: &[(String, RgbImage)], palette: &LabelPalette) -> Result<Vec<LabelMap>> {
        let in_dir = self.work_dir.join("segmenter_in");
        let out_dir = self.work_dir.join("segmenter_out");
        for d in [&in_dir, &out_dir] {
            std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
        }
        for (name, img) in images {
            let path = in_dir.join(name);
            img.save(&path).map_err(|e| Error::Image { path, source: e })?;
        }
        let status = Command::new(&self.program)
            .args(&self.args)
            .arg(&in_dir)
            .arg(&out_dir)
            .status()
            .map_err(|e| Error::io(&self.program, e))?;
        if !status.success() {
            return Err(Error::Validation(format!(
                "segmenter {} exited with {status}",
                self.program.display()
            )));
        }
        images
            .iter()
            .map(|(name, _)| {
                let img = load_rgb(&out_dir.join(name))?;
                Ok(quantize_rgb(&img, palette))
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// Source images come from the X side of each pair.
    XToY,
    YToX,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    /// Outputs are label maps: quantize them and compare with the target side.
    PhotoToLabel,
    /// Outputs are photographs: segment them and compare with the source labels.
    LabelToPhoto,
}

pub struct EvalOptions<'a> {
    pub direction: Direction,
    pub mode: EvalMode,
    pub palette: Option<&'a LabelPalette>,
    pub segmenter: Option<&'a dyn Segmenter>,
    pub preprocess: PreprocessConfig,
    /// When set, an `input | output | ground truth` strip is written per image.
    pub grid_dir: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImageRecord {
    pub name: String,
    pub pixel_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub metrics: Metrics,
    pub confusion: ConfusionMatrix,
    pub images: Vec<ImageRecord>,
}

impl EvalReport {
    pub fn to_key_value(&self) -> String {
        let mut s = format!(
            "pixel_acc={:.6}\nmean_acc={:.6}\nmean_iu={:.6}\nimages={}\n",
            self.metrics.pixel_accuracy,
            self.metrics.mean_accuracy,
            self.metrics.mean_iu,
            self.images.len()
        );
        for r in &self.images {
            let _ = writeln!(s, "image={} pixel_acc={:.6}", r.name, r.pixel_accuracy);
        }
        s
    }

    pub fn to_table(&self) -> String {
        let m = &self.metrics;
        format!(
            "| Pixel Acc. | Mean Acc. | Mean IU |\n|-----------:|----------:|--------:|\n| {:>10.4} | {:>9.4} | {:>7.4} |\n",
            m.pixel_accuracy, m.mean_accuracy, m.mean_iu
        )
    }
}

fn batch_to_rgb(batch: &ImageBatch) -> RgbImage {
    let [_, _, h, w] = batch.shape();
    let ValueRange { lo, hi } = batch.range();
    let d = batch.data();
    RgbImage::from_fn(w as u32, h as u32, |x, y| {
        Rgb([0, 1, 2].map(|c| {
            let v = (d[(0, c, y as usize, x as usize)] - lo) / (hi - lo) * 255.0;
            v.round().clamp(0.0, 255.0) as u8
        }))
    })
}

fn write_grid(dir: &Path, name: &str, panels: [&RgbImage; 3]) -> Result<()> {
    let (w, h) = panels[0].dimensions();
    let mut grid = RgbImage::new(w * 3, h);
    for (i, p) in panels.iter().enumerate() {
        image::imageops::overlay(&mut grid, *p, (i as u32 * w) as i64, 0);
    }
    let path = dir.join(name);
    grid.save(&path).map_err(|e| Error::Image { path, source: e })
}

/// Runs `translator` over every aligned pair of `manifest` with deterministic
/// preprocessing and accumulates a single confusion matrix.
pub fn evaluate_translation(
    translator: &dyn Translator,
    manifest: &DatasetManifest,
    options: &EvalOptions<'_>,
) -> Result<EvalReport> {
    let palette = options
        .palette
        .ok_or_else(|| Error::config("palette", "evaluation needs a label palette"))?;
    if options.mode == EvalMode::LabelToPhoto && options.segmenter.is_none() {
        return Err(Error::config(
            "segmenter",
            "label -> photo evaluation needs a segmenter hook",
        ));
    }
    if manifest.paired.is_empty() {
        return Err(Error::Validation("evaluation needs aligned pairs".into()));
    }
    if let Some(dir) = &options.grid_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let (source_domain, label_on_target) = match (options.direction, options.mode) {
        (Direction::XToY, EvalMode::PhotoToLabel) => (Domain::X, true),
        (Direction::XToY, EvalMode::LabelToPhoto) => (Domain::X, false),
        (Direction::YToX, EvalMode::PhotoToLabel) => (Domain::Y, true),
        (Direction::YToX, EvalMode::LabelToPhoto) => (Domain::Y, false),
    };
    let (source_interp, target_interp) = if label_on_target {
        (options.preprocess.interpolation, Interpolation::Nearest)
    } else {
        (Interpolation::Nearest, options.preprocess.interpolation)
    };
    let mut confusion = ConfusionMatrix::new(palette.len());
    let mut records = Vec::new();
    let mut generated = Vec::new();
    let mut truths = Vec::new();
    for (i, (px, py)) in manifest.paired.iter().enumerate() {
        let (src_path, tgt_path) = match options.direction {
            Direction::XToY => (px, py),
            Direction::YToX => (py, px),
        };
        let name = format!("{i:05}.png");
        let src = preprocess_eval(&load_rgb(src_path)?, &options.preprocess, source_interp)?;
        let tgt = preprocess_eval(&load_rgb(tgt_path)?, &options.preprocess, target_interp)?;
        let input = image_to_batch(&src, source_domain, options.preprocess.normalize_to)?;
        let output = translator.translate(&input)?;
        let out_rgb = batch_to_rgb(&output);
        let truth_img = if label_on_target { &tgt } else { &src };
        let truth = quantize_rgb(truth_img, palette);
        if let Some(dir) = &options.grid_dir {
            write_grid(dir, &name, [&src, &out_rgb, &tgt])?;
        }
        if label_on_target {
            let pred = quantize_labels(&output, palette)?.remove(0);
            let mut single = ConfusionMatrix::new(palette.len());
            single.accumulate(&pred, &truth)?;
            confusion.merge(&single)?;
            records.push(ImageRecord {
                name,
                pixel_accuracy: single.metrics()?.pixel_accuracy,
            });
        } else {
            generated.push((name, out_rgb));
            truths.push(truth);
        }
    }
    if !label_on_target {
        let segmenter = options.segmenter.expect("checked above");
        let preds = segmenter.segment(&generated, palette)?;
        if preds.len() != truths.len() {
            return Err(Error::Validation(format!(
                "segmenter returned {} label maps for {} images",
                preds.len(),
                truths.len()
            )));
        }
        for ((name, _), (pred, truth)) in generated.iter().zip(preds.iter().zip(&truths)) {
            let mut single = ConfusionMatrix::new(palette.len());
            single.accumulate(pred, truth)?;
            confusion.merge(&single)?;
            records.push(ImageRecord {
                name: name.clone(),
                pixel_accuracy: single.metrics()?.pixel_accuracy,
            });
        }
    }
    Ok(EvalReport {
        metrics: confusion.metrics()?,
        confusion,
        images: records,
    })
}

/// Mean absolute error between a translator's outputs and the aligned targets,
/// on the normalized scale.
pub fn mean_l1_error(
    translator: &dyn Translator,
    manifest: &DatasetManifest,
    direction: Direction,
    preprocess: &PreprocessConfig,
) -> Result<f64> {
    if manifest.paired.is_empty() {
        return Err(Error::Validation("L1 evaluation needs aligned pairs".into()));
    }
    let mut total = 0.0;
    for (px, py) in &manifest.paired {
        let (src, tgt, domain) = match direction {
            Direction::XToY => (px, py, Domain::X),
            Direction::YToX => (py, px, Domain::Y),
        };
        let load = |p: &Path, d: Domain| -> Result<Tensor> {
            let img = preprocess_eval(&load_rgb(p)?, preprocess, preprocess.interpolation)?;
            Ok(image_to_batch(&img, d, preprocess.normalize_to)?.into_data())
        };
        let input = ImageBatch::with_range(load(src, domain)?, domain, preprocess.normalize_to)?;
        let out = translator.translate(&input)?;
        let target = load(tgt, domain.flip())?;
        total += crate::losses::mean_abs_diff(out.data(), &target).0;
    }
    Ok(total / manifest.paired.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(ids: &[usize], w: usize) -> LabelMap {
        LabelMap::new(ids.len() / w, w, ids.to_vec()).unwrap()
    }

    #[test]
    fn two_class_metrics() {
        let cm = ConfusionMatrix::from_counts(&[vec![3, 1], vec![2, 4]]).unwrap();
        let m = cm.metrics().unwrap();
        assert!((m.pixel_accuracy - 0.7).abs() < 1e-12);
        assert!((m.mean_accuracy - (3.0 / 4.0 + 4.0 / 6.0) / 2.0).abs() < 1e-12);
        assert!((m.mean_iu - (3.0 / 6.0 + 4.0 / 7.0) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn perfect_and_absent_classes() {
        let cm = ConfusionMatrix::from_counts(&[vec![5, 0, 0], vec![0, 0, 0], vec![0, 0, 7]]).unwrap();
        let m = cm.metrics().unwrap();
        assert_eq!((m.pixel_accuracy, m.mean_accuracy, m.mean_iu), (1.0, 1.0, 1.0));
        assert!(ConfusionMatrix::new(3).metrics().is_err());
    }

    #[test]
    fn accumulate_counts_pixel_pairs() {
        let truth = map(&[0, 1, 1, 0], 2);
        let pred = map(&[0, 0, 1, 1], 2);
        let mut cm = ConfusionMatrix::new(2);
        cm.accumulate(&pred, &truth).unwrap();
        // (t0,p0) (t1,p0) (t1,p1) (t0,p1)
        assert_eq!([cm.count(0, 0), cm.count(0, 1), cm.count(1, 0), cm.count(1, 1)], [1, 1, 1, 1]);
        let mut diag = ConfusionMatrix::new(2);
        diag.accumulate(&truth, &truth).unwrap();
        assert_eq!([diag.count(0, 1), diag.count(1, 0)], [0, 0]);
        assert!(diag.accumulate(&map(&[0, 2], 2), &map(&[0, 1], 2)).is_err());
    }

    #[test]
    fn accumulation_commutes() {
        let a = (map(&[0, 1, 2, 2], 2), map(&[0, 1, 1, 2], 2));
        let b = (map(&[2, 2, 0, 1], 2), map(&[1, 2, 0, 0], 2));
        let mut ab = ConfusionMatrix::new(3);
        ab.accumulate(&a.0, &a.1).unwrap();
        ab.accumulate(&b.0, &b.1).unwrap();
        let mut ba = ConfusionMatrix::new(3);
        ba.accumulate(&b.0, &b.1).unwrap();
        ba.accumulate(&a.0, &a.1).unwrap();
        assert_eq!(ab, ba);
    }

    #[test]
    fn tie_goes_to_lower_class() {
        let p = LabelPalette::from_colors(&[[0, 0, 0], [10, 0, 0]]).unwrap();
        assert_eq!(p.nearest([5.0, 0.0, 0.0]), 0);
        let q = LabelPalette::from_colors(&[[10, 0, 0], [0, 0, 0]]).unwrap();
        assert_eq!(q.nearest([5.0, 0.0, 0.0]), 0);
    }

    #[test]
    fn palette_validation() {
        assert!(LabelPalette::from_colors(&[]).is_err());
        assert!(LabelPalette::from_colors(&[[1, 2, 3], [1, 2, 3]]).is_err());
        let gap = vec![PaletteEntry {
            class_id: 1,
            color: [0, 0, 0],
            name: "a".into(),
        }];
        assert!(LabelPalette::new(gap).is_err());
    }

    #[test]
    fn exact_palette_colors_round_trip() {
        let p = LabelPalette::from_colors(&[[128, 64, 128], [107, 142, 35], [70, 130, 180]]).unwrap();
        let labels = map(&[0, 1, 2, 2, 1, 0, 0, 0, 1, 2, 1, 1, 0, 2, 2, 1], 4);
        let rgb = p.render(&labels);
        assert_eq!(quantize_rgb(&rgb, &p), labels);
        let batch = image_to_batch(&rgb, Domain::X, ValueRange::default()).unwrap();
        assert_eq!(quantize_labels(&batch, &p).unwrap()[0], labels);
    }
}
