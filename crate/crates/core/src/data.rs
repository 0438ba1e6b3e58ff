//! Samples, dataset loading/export, labeled/unlabeled splits and the
//! synthetic shape dataset.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use image::imageops::FilterType;
use image::{GrayImage, RgbImage};
use log::warn;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Default square training resolution for desk-scale runs.
pub const DEFAULT_RESOLUTION: usize = 128;

/// One image with an optional binary mask.
///
/// The image is stored planar (`3 x H x W`, values in `[0, 1]`). Unlabeled
/// samples produced by [`make_split`] keep their annotation in a hidden slot
/// that training never reads; it exists only for auditing pseudo-labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    pub height: usize,
    pub width: usize,
    pub image: Vec<f32>,
    pub mask: Option<Vec<u8>>,
    hidden_mask: Option<Vec<u8>>,
}

impl Sample {
    pub fn new(id: impl Into<String>, height: usize, width: usize, image: Vec<f32>, mask: Option<Vec<u8>>) -> Result<Self> {
        let id = id.into();
        if image.len() != 3 * height * width {
            return Err(Error::Shape(format!("sample {id}: image has {} values, expected 3x{height}x{width}", image.len())));
        }
        if let Some(m) = &mask {
            if m.len() != height * width {
                return Err(Error::Shape(format!("sample {id}: mask has {} values, expected {height}x{width}", m.len())));
            }
            if m.iter().any(|&v| v > 1) {
                return Err(Error::Config(format!("sample {id}: mask values must be 0 or 1")));
            }
        }
        Ok(Self { id, height, width, image, mask, hidden_mask: None })
    }

    pub fn is_labeled(&self) -> bool {
        self.mask.is_some()
    }

    /// Ground truth withheld from training, if this sample was unlabeled by a split.
    pub fn hidden_mask(&self) -> Option<&[u8]> {
        self.hidden_mask.as_deref()
    }

    /// Mask for evaluation: the visible one, falling back to the hidden one.
    pub fn any_mask(&self) -> Option<&[u8]> {
        self.mask.as_deref().or(self.hidden_mask.as_deref())
    }

    fn into_unlabeled(mut self) -> Self {
        self.hidden_mask = self.mask.take();
        self
    }

    pub fn foreground_fraction(&self) -> Option<f64> {
        self.any_mask().map(|m| m.iter().filter(|&&v| v == 1).count() as f64 / m.len() as f64)
    }
}

/// Stacks sample images into an `[n, 3, H, W]` batch.
pub fn image_batch<T: Real>(samples: &[&Sample]) -> Result<Tensor<T>> {
    let (h, w) = common_size(samples)?;
    let mut data = Vec::with_capacity(samples.len() * 3 * h * w);
    for s in samples {
        data.extend(s.image.iter().map(|&v| T::lit(v as f64)));
    }
    Tensor::from_vec(samples.len(), 3, h, w, data)
}

/// Stacks visible masks into an `[n, 1, H, W]` batch.
pub fn mask_batch<T: Real>(samples: &[&Sample]) -> Result<Tensor<T>> {
    let (h, w) = common_size(samples)?;
    let mut data = Vec::with_capacity(samples.len() * h * w);
    for s in samples {
        let m = s.mask.as_ref().ok_or_else(|| Error::Config(format!("sample {} has no mask", s.id)))?;
        data.extend(m.iter().map(|&v| if v == 1 { T::one() } else { T::zero() }));
    }
    Tensor::from_vec(samples.len(), 1, h, w, data)
}

fn common_size(samples: &[&Sample]) -> Result<(usize, usize)> {
    let first = samples.first().ok_or_else(|| Error::Config("empty batch".into()))?;
    let (h, w) = (first.height, first.width);
    if samples.iter().any(|s| s.height != h || s.width != w) {
        return Err(Error::Shape("samples in a batch must share one resolution".into()));
    }
    Ok((h, w))
}

/// Binarizes gray levels: a pixel is foreground when it exceeds half of the
/// format's maximum value.
pub fn binarize_gray(values: &[u16], max_value: u16) -> Vec<u8> {
    let half = max_value as f64 / 2.0;
    values.iter().map(|&v| u8::from(v as f64 > half)).collect()
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct DatasetLayout {
    pub images_dir: String,
    pub masks_dir: String,
}

impl Default for DatasetLayout {
    fn default() -> Self {
        Self { images_dir: "images".into(), masks_dir: "masks".into() }
    }
}

fn stems(dir: &Path, exts: &[&str]) -> Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let ext = path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase());
        let stem = path.file_stem().and_then(|s| s.to_str()).map(str::to_owned);
        if let (Some(ext), Some(stem)) = (ext, stem) {
            if exts.contains(&ext.as_str()) {
                out.insert(stem, path);
            }
        }
    }
    Ok(out)
}

/// Loads `<root>/<images_dir>/*.{png,jpg}` with masks paired by file stem
/// from `<root>/<masks_dir>/*.png`. Images are resized to
/// `resolution x resolution`. Samples come back sorted by id.
pub fn load_dataset(root: &Path, layout: &DatasetLayout, resolution: usize) -> Result<Vec<Sample>> {
    let images_dir = root.join(&layout.images_dir);
    if !images_dir.is_dir() {
        return Err(Error::Config(format!("image directory {} does not exist", images_dir.display())));
    }
    let images = stems(&images_dir, &["png", "jpg", "jpeg"])?;
    if images.is_empty() {
        return Err(Error::Config(format!("image directory {} contains no images", images_dir.display())));
    }
    let masks_dir = root.join(&layout.masks_dir);
    let masks = if masks_dir.is_dir() { stems(&masks_dir, &["png"])? } else { BTreeMap::new() };
    for stem in masks.keys() {
        if !images.contains_key(stem) {
            warn!("mask {stem} has no matching image; ignored");
        }
    }

    let mut out = Vec::with_capacity(images.len());
    for (stem, path) in &images {
        let img = image::open(path).map_err(|source| Error::Image { path: path.clone(), source })?;
        let mask = match masks.get(stem) {
            Some(mpath) => {
                let m = image::open(mpath).map_err(|source| Error::Image { path: mpath.clone(), source })?;
                if m.width() != img.width() || m.height() != img.height() {
                    warn!(
                        "sample {stem}: image is {}x{} but mask is {}x{}; sample rejected",
                        img.width(),
                        img.height(),
                        m.width(),
                        m.height()
                    );
                    continue;
                }
                let gray = m.to_luma16();
                let gray = image::imageops::resize(&gray, resolution as u32, resolution as u32, FilterType::Triangle);
                Some(binarize_gray(gray.as_raw(), u16::MAX))
            }
            None => None,
        };
        out.push(Sample::new(stem.clone(), resolution, resolution, resized_planar(&img, resolution), mask)?);
    }
    out.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(out)
}

fn resized_planar(img: &image::DynamicImage, resolution: usize) -> Vec<f32> {
    let rgb = image::imageops::resize(&img.to_rgb8(), resolution as u32, resolution as u32, FilterType::Triangle);
    planar_from_rgb(&rgb)
}

/// Loads one image as an unlabeled sample named by its file stem.
pub fn load_image(path: &Path, resolution: usize) -> Result<Sample> {
    let img = image::open(path).map_err(|source| Error::Image { path: path.to_path_buf(), source })?;
    let id = path.file_stem().and_then(|s| s.to_str()).unwrap_or("image").to_owned();
    Sample::new(id, resolution, resolution, resized_planar(&img, resolution), None)
}

/// Image files (png/jpg) directly inside `dir`, sorted by stem.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Err(Error::Config(format!("image directory {} does not exist", dir.display())));
    }
    Ok(stems(dir, &["png", "jpg", "jpeg"])?.into_values().collect())
}

fn planar_from_rgb(rgb: &RgbImage) -> Vec<f32> {
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let mut out = vec![0.0f32; 3 * h * w];
    for (x, y, px) in rgb.enumerate_pixels() {
        for c in 0..3 {
            out[c * h * w + y as usize * w + x as usize] = px[c] as f32 / 255.0;
        }
    }
    out
}

fn rgb_from_planar(s: &Sample) -> RgbImage {
    let (h, w) = (s.height, s.width);
    RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let at = |c: usize| (s.image[c * h * w + y as usize * w + x as usize].clamp(0.0, 1.0) * 255.0).round() as u8;
        image::Rgb([at(0), at(1), at(2)])
    })
}

/// Writes samples in the directory layout read by [`load_dataset`]. Only
/// visible masks are written.
pub fn export_dataset(samples: &[Sample], root: &Path, layout: &DatasetLayout) -> Result<()> {
    let images_dir = root.join(&layout.images_dir);
    let masks_dir = root.join(&layout.masks_dir);
    fs::create_dir_all(&images_dir).map_err(|e| Error::io(&images_dir, e))?;
    fs::create_dir_all(&masks_dir).map_err(|e| Error::io(&masks_dir, e))?;
    for s in samples {
        let path = images_dir.join(format!("{}.png", s.id));
        rgb_from_planar(s).save(&path).map_err(|source| Error::Image { path: path.clone(), source })?;
        if let Some(m) = &s.mask {
            let path = masks_dir.join(format!("{}.png", s.id));
            let img = GrayImage::from_fn(s.width as u32, s.height as u32, |x, y| {
                image::Luma([m[y as usize * s.width + x as usize] * 255])
            });
            img.save(&path).map_err(|source| Error::Image { path: path.clone(), source })?;
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "snake_case")]
pub enum LabeledAmount {
    Count(usize),
    Ratio(f64),
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct SplitConfig {
    pub labeled: LabeledAmount,
    pub seed: u64,
}

impl SplitConfig {
    pub fn labeled_count(&self, total: usize) -> Result<usize> {
        let n = match self.labeled {
            LabeledAmount::Count(n) => n,
            LabeledAmount::Ratio(r) => {
                if !(r > 0.0 && r <= 1.0) {
                    return Err(Error::Config(format!("labeled ratio {r} must lie in (0, 1]")));
                }
                ((r * total as f64).round() as usize).max(1)
            }
        };
        if n == 0 {
            return Err(Error::Config("at least one labeled sample is required".into()));
        }
        if n > total {
            return Err(Error::Config(format!("requested {n} labeled samples but the dataset has {total}")));
        }
        Ok(n)
    }
}

/// Partitions fully annotated samples into a labeled set and an unlabeled
/// set whose masks are moved into the hidden slot. Selection is uniform under
/// the seed; both halves are sorted by id.
pub fn make_split(samples: Vec<Sample>, cfg: &SplitConfig) -> Result<(Vec<Sample>, Vec<Sample>)> {
    if let Some(s) = samples.iter().find(|s| !s.is_labeled()) {
        return Err(Error::Config(format!("sample {} has no mask; splits need fully annotated data", s.id)));
    }
    let k = cfg.labeled_count(samples.len())?;
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.sort_by(|&a, &b| samples[a].id.cmp(&samples[b].id));
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    order.shuffle(&mut rng);
    let mut chosen = vec![false; samples.len()];
    for &i in &order[..k] {
        chosen[i] = true;
    }
    let mut labeled = Vec::with_capacity(k);
    let mut unlabeled = Vec::with_capacity(samples.len() - k);
    for (s, keep) in samples.into_iter().zip(chosen) {
        if keep {
            labeled.push(s);
        } else {
            unlabeled.push(s.into_unlabeled());
        }
    }
    labeled.sort_by(|a, b| a.id.cmp(&b.id));
    unlabeled.sort_by(|a, b| a.id.cmp(&b.id));
    Ok((labeled, unlabeled))
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq, Hash)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    Ellipse,
    Rectangle,
    Blob,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct SyntheticConfig {
    pub image_size: usize,
    pub num_images: usize,
    pub shape_kinds: Vec<ShapeKind>,
    pub noise_level: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            image_size: 32,
            num_images: 500,
            shape_kinds: vec![ShapeKind::Ellipse, ShapeKind::Rectangle, ShapeKind::Blob],
            noise_level: 0.1,
            seed: 1,
        }
    }
}

const MIN_FOREGROUND: f64 = 0.05;
const MAX_FOREGROUND: f64 = 0.60;

struct Shape {
    kind: ShapeKind,
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
    rot: f64,
    harmonics: [(f64, f64); 3],
}

impl Shape {
    fn random(kind: ShapeKind, size: f64, rng: &mut ChaCha8Rng) -> Self {
        let area = rng.gen_range(0.08..0.45) * size * size;
        let aspect: f64 = rng.gen_range(0.5..2.0);
        let (a, b) = match kind {
            ShapeKind::Ellipse => {
                let a = (area * aspect / PI).sqrt();
                (a, area / (PI * a))
            }
            ShapeKind::Rectangle => {
                let a = (area * aspect / 4.0).sqrt();
                (a, area / (4.0 * a))
            }
            ShapeKind::Blob => {
                let r = (area / PI).sqrt();
                (r, r)
            }
        };
        let mut harmonics = [(0.0, 0.0); 3];
        if kind == ShapeKind::Blob {
            for h in &mut harmonics {
                *h = (rng.gen_range(0.0..0.22), rng.gen_range(0.0..2.0 * PI));
            }
        }
        Self {
            kind,
            cx: rng.gen_range(0.3..0.7) * size,
            cy: rng.gen_range(0.3..0.7) * size,
            a,
            b,
            rot: rng.gen_range(0.0..PI),
            harmonics,
        }
    }

    fn contains(&self, x: f64, y: f64) -> bool {
        let (dx, dy) = (x - self.cx, y - self.cy);
        let (s, c) = self.rot.sin_cos();
        let u = c * dx + s * dy;
        let v = -s * dx + c * dy;
        match self.kind {
            ShapeKind::Ellipse => (u / self.a).powi(2) + (v / self.b).powi(2) <= 1.0,
            ShapeKind::Rectangle => u.abs() <= self.a && v.abs() <= self.b,
            ShapeKind::Blob => {
                let theta = v.atan2(u);
                let mut r = 1.0;
                for (k, &(amp, phase)) in self.harmonics.iter().enumerate() {
                    r += amp * ((k as f64 + 2.0) * theta + phase).cos();
                }
                (u * u + v * v).sqrt() <= self.a * r
            }
        }
    }
}

/// Renders a dataset of single-shape images with exact binary masks.
///
/// Background intensities (mean over channels) lie in a band around a
/// per-image base level; the foreground level sits strictly outside that band,
/// so without noise every foreground pixel differs from every background pixel.
pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<Vec<Sample>> {
    if cfg.shape_kinds.is_empty() {
        return Err(Error::Config("synthetic generator needs at least one shape kind".into()));
    }
    if cfg.image_size < 32 {
        return Err(Error::Config(format!("synthetic image size {} is below the minimum of 32", cfg.image_size)));
    }
    if cfg.noise_level < 0.0 || !cfg.noise_level.is_finite() {
        return Err(Error::Config("noise level must be a nonnegative real".into()));
    }
    let size = cfg.image_size;
    let n_px = size * size;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let noise = if cfg.noise_level > 0.0 { Some(Normal::new(0.0, cfg.noise_level).unwrap()) } else { None };
    let mut out = Vec::with_capacity(cfg.num_images);

    for i in 0..cfg.num_images {
        let kind = *cfg.shape_kinds.choose(&mut rng).unwrap();
        let mask = loop {
            let shape = Shape::random(kind, size as f64, &mut rng);
            let mask: Vec<u8> = (0..n_px)
                .map(|p| u8::from(shape.contains((p % size) as f64 + 0.5, (p / size) as f64 + 0.5)))
                .collect();
            let frac = mask.iter().filter(|&&v| v == 1).count() as f64 / n_px as f64;
            if (MIN_FOREGROUND..=MAX_FOREGROUND).contains(&frac) {
                break mask;
            }
        };

        // Background band: base +- (gradient + ripple).
        let base = rng.gen_range(0.25..0.75);
        let grad_amp = rng.gen_range(0.0..0.08);
        let ripple_amp = rng.gen_range(0.0..0.04);
        let grad_dir = rng.gen_range(0.0..2.0 * PI);
        let ripple_freq = rng.gen_range(1.0..3.0);
        let ripple_phase = rng.gen_range(0.0..2.0 * PI);
        let band = grad_amp + ripple_amp;
        let shade_amp = rng.gen_range(0.0..0.04);
        let contrast = rng.gen_range(0.06..0.2);
        let gap = band + shade_amp + contrast;
        let fg_level = if base < 0.5 { base + gap } else { base - gap };
        let offsets = |rng: &mut ChaCha8Rng| {
            let a = rng.gen_range(-0.06..0.06);
            let b = rng.gen_range(-0.06..0.06);
            let c: f64 = -(a + b);
            [a, b, c.clamp(-0.06, 0.06)]
        };
        let bg_off = offsets(&mut rng);
        let fg_off = offsets(&mut rng);
        let shade_dir = rng.gen_range(0.0..2.0 * PI);

        let mut image = vec![0.0f32; 3 * n_px];
        for p in 0..n_px {
            let x = (p % size) as f64 / size as f64 - 0.5;
            let y = (p / size) as f64 / size as f64 - 0.5;
            let (level, off) = if mask[p] == 1 {
                let t = x * shade_dir.cos() + y * shade_dir.sin();
                (fg_level + shade_amp * (2.0 * t).clamp(-1.0, 1.0), fg_off)
            } else {
                let t = x * grad_dir.cos() + y * grad_dir.sin();
                let ripple = (2.0 * PI * ripple_freq * (x + y) + ripple_phase).sin();
                (base + grad_amp * (2.0 * t).clamp(-1.0, 1.0) + ripple_amp * ripple, bg_off)
            };
            for c in 0..3 {
                let mut v = level + off[c];
                if let Some(noise) = &noise {
                    v += noise.sample(&mut rng);
                }
                image[c * n_px + p] = v.clamp(0.0, 1.0) as f32;
            }
        }
        out.push(Sample::new(format!("s{}_{i:05}", cfg.seed), size, size, image, Some(mask))?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labeled_samples(n: usize) -> Vec<Sample> {
        (0..n)
            .map(|i| Sample::new(format!("img{i:04}"), 2, 2, vec![0.5; 12], Some(vec![0, 1, 1, 0])).unwrap())
            .collect()
    }

    #[test]
    fn gray_mask_binarization_uses_half_of_max() {
        assert_eq!(binarize_gray(&[0, 128, 255], 255), vec![0, 1, 1]);
        assert_eq!(binarize_gray(&[127, 128], 255), vec![0, 1]);
    }

    #[test]
    fn binarizing_binary_mask_is_identity() {
        let m = vec![0u8, 1, 1, 0, 1];
        let gray: Vec<u16> = m.iter().map(|&v| v as u16 * 255).collect();
        assert_eq!(binarize_gray(&gray, 255), m);
    }

    #[test]
    fn split_partitions_ids() {
        let samples = labeled_samples(100);
        let cfg = SplitConfig { labeled: LabeledAmount::Count(10), seed: 1 };
        let (l, u) = make_split(samples.clone(), &cfg).unwrap();
        assert_eq!(l.len(), 10);
        assert_eq!(u.len(), 90);
        assert!(u.iter().all(|s| s.mask.is_none() && s.hidden_mask().is_some()));
        let mut ids: Vec<&str> = l.iter().chain(&u).map(|s| s.id.as_str()).collect();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), 100);
        let (l2, u2) = make_split(samples, &cfg).unwrap();
        assert_eq!(l, l2);
        assert_eq!(u, u2);
    }

    #[test]
    fn ratio_split_of_ten_percent() {
        let cfg = SplitConfig { labeled: LabeledAmount::Ratio(0.10), seed: 3 };
        assert_eq!(cfg.labeled_count(10_000).unwrap(), 1000);
        let (l, u) = make_split(labeled_samples(200), &cfg).unwrap();
        assert_eq!((l.len(), u.len()), (20, 180));
    }

    #[test]
    fn oversized_split_is_rejected() {
        let cfg = SplitConfig { labeled: LabeledAmount::Count(11), seed: 0 };
        assert!(matches!(make_split(labeled_samples(10), &cfg), Err(Error::Config(_))));
    }

    #[test]
    fn split_needs_annotations() {
        let mut s = labeled_samples(3);
        s[1].mask = None;
        let cfg = SplitConfig { labeled: LabeledAmount::Count(1), seed: 0 };
        assert!(make_split(s, &cfg).is_err());
    }

    #[test]
    fn sample_rejects_non_binary_and_mismatched_masks() {
        assert!(Sample::new("a", 2, 2, vec![0.0; 12], Some(vec![0, 2, 0, 0])).is_err());
        assert!(Sample::new("a", 2, 2, vec![0.0; 12], Some(vec![0, 1, 0])).is_err());
        assert!(Sample::new("a", 2, 2, vec![0.0; 11], None).is_err());
    }

    #[test]
    fn synthetic_is_deterministic() {
        let cfg = SyntheticConfig { image_size: 64, num_images: 10, seed: 7, ..Default::default() };
        assert_eq!(generate_synthetic(&cfg).unwrap(), generate_synthetic(&cfg).unwrap());
    }

    #[test]
    fn synthetic_without_noise_separates_foreground() {
        let cfg = SyntheticConfig { image_size: 32, num_images: 20, noise_level: 0.0, seed: 4, ..Default::default() };
        for s in generate_synthetic(&cfg).unwrap() {
            let n = s.height * s.width;
            let mask = s.mask.as_ref().unwrap();
            let px = |p: usize| [s.image[p], s.image[n + p], s.image[2 * n + p]];
            let fg: Vec<[f32; 3]> = (0..n).filter(|&p| mask[p] == 1).map(px).collect();
            let bg: Vec<[f32; 3]> = (0..n).filter(|&p| mask[p] == 0).map(px).collect();
            for f in &fg {
                assert!(bg.iter().all(|b| b != f), "sample {}", s.id);
            }
        }
    }

    #[test]
    fn synthetic_rejects_bad_configs() {
        let empty = SyntheticConfig { shape_kinds: vec![], ..Default::default() };
        assert!(matches!(generate_synthetic(&empty), Err(Error::Config(_))));
        let small = SyntheticConfig { image_size: 16, ..Default::default() };
        assert!(generate_synthetic(&small).is_err());
    }
}
