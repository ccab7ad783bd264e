//! Dataset manifests, preprocessing, augmentation and stratified splits.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use image::DynamicImage;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    PneumoniaVsNormal,
    CovidVsNormal,
    CovidSeverity,
}

impl Scenario {
    pub fn class_names(&self) -> &'static [&'static str] {
        match self {
            Scenario::PneumoniaVsNormal => &["pneumonia", "normal"],
            Scenario::CovidVsNormal => &["covid", "normal"],
            Scenario::CovidSeverity => &["mild", "medium", "severe"],
        }
    }

    pub fn classes(&self) -> Vec<String> {
        self.class_names().iter().map(|s| s.to_string()).collect()
    }

    pub fn has_class(&self, label: &str) -> bool {
        self.class_names().contains(&label)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Mild,
    Medium,
    Severe,
}

impl Severity {
    pub fn as_str(&self) -> &'static str {
        match self {
            Severity::Mild => "mild",
            Severity::Medium => "medium",
            Severity::Severe => "severe",
        }
    }
}

impl fmt::Display for Severity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

pub const MAX_SEVERITY_SCORE: f64 = 6.0;

/// Bins a 0-6 opacity score: mild below 2, severe above 4, medium otherwise
/// (both 2 and 4 are medium).
pub fn severity_bin(score: f64) -> Result<Severity> {
    if !(0.0..=MAX_SEVERITY_SCORE).contains(&score) {
        return Err(Error::ScoreOutOfRange(score));
    }
    Ok(if score < 2.0 {
        Severity::Mild
    } else if score > 4.0 {
        Severity::Severe
    } else {
        Severity::Medium
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub image_id: String,
    pub path: PathBuf,
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub severity_score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub scenario: Scenario,
    pub records: Vec<ImageRecord>,
}

#[derive(Deserialize)]
struct RawRecord {
    image_id: String,
    path: PathBuf,
    #[serde(default)]
    label: Option<String>,
    #[serde(default)]
    severity_score: Option<f64>,
}

#[derive(Deserialize)]
struct RawManifest {
    scenario: Scenario,
    records: Vec<RawRecord>,
}

impl Dataset {
    /// Parses and validates a manifest. Relative image paths are resolved
    /// against `base_dir`. In the severity scenario the label may be omitted
    /// and is then derived from the score.
    pub fn from_json(text: &str, base_dir: Option<&Path>) -> Result<Self> {
        let raw: RawManifest =
            serde_json::from_str(text).map_err(|e| Error::ManifestParse(e.to_string()))?;
        let scenario = raw.scenario;
        let mut seen = HashSet::new();
        let mut records = Vec::with_capacity(raw.records.len());
        for r in raw.records {
            if !seen.insert(r.image_id.clone()) {
                return Err(Error::DuplicateId(r.image_id));
            }
            if r.image_id.is_empty()
                || r.image_id.contains(['/', '\\'])
                || r.image_id.starts_with('.')
            {
                return Err(Error::ManifestParse(format!(
                    "image_id {:?} must be a plain file-name-safe token",
                    r.image_id
                )));
            }
            let label = if scenario == Scenario::CovidSeverity {
                let score = r
                    .severity_score
                    .ok_or_else(|| Error::MissingScore(r.image_id.clone()))?;
                let binned = severity_bin(score)?.as_str().to_string();
                match r.label {
                    Some(l) if l != binned => {
                        return Err(Error::LabelScoreMismatch {
                            image_id: r.image_id,
                            label: l,
                            binned,
                        })
                    }
                    _ => binned,
                }
            } else {
                if r.severity_score.is_some() {
                    return Err(Error::UnexpectedScore(r.image_id));
                }
                let label = r.label.ok_or_else(|| {
                    Error::ManifestParse(format!("record {:?} has no label", r.image_id))
                })?;
                if !scenario.has_class(&label) {
                    return Err(Error::UnknownLabel(label));
                }
                label
            };
            let path = match base_dir {
                Some(dir) if r.path.is_relative() => dir.join(&r.path),
                _ => r.path,
            };
            records.push(ImageRecord {
                image_id: r.image_id,
                path,
                label,
                severity_score: r.severity_score,
            });
        }
        Ok(Self { scenario, records })
    }

    pub fn classes(&self) -> Vec<String> {
        self.scenario.classes()
    }

    /// Record count per class, in scenario class order.
    pub fn class_histogram(&self) -> Vec<(String, usize)> {
        self.classes()
            .into_iter()
            .map(|c| {
                let n = self.records.iter().filter(|r| r.label == c).count();
                (c, n)
            })
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Encode(e.to_string()))
    }
}

/// Loads a dataset manifest; image paths are resolved relative to it.
pub fn load_manifest(path: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Dataset::from_json(&text, path.parent())
}

pub fn save_manifest(dataset: &Dataset, path: &Path) -> Result<()> {
    fs::write(path, dataset.to_json()?).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessConfig {
    /// `(height, width)`.
    pub size: (usize, usize),
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            size: (224, 224),
            mean: [0.485, 0.456, 0.406],
            std: [0.229, 0.224, 0.225],
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if self.size.0 == 0 || self.size.1 == 0 {
            return Err(Error::Domain("target size must be positive".into()));
        }
        if self.std.iter().any(|s| s.is_nan() || *s <= 0.0) {
            return Err(Error::Domain(format!(
                "stds must be positive, got {:?}",
                self.std
            )));
        }
        Ok(())
    }
}

pub fn decode_image(bytes: &[u8]) -> Result<DynamicImage> {
    let img = image::load_from_memory(bytes).map_err(|e| Error::Decode(e.to_string()))?;
    if img.width() == 0 || img.height() == 0 {
        return Err(Error::ZeroSizedImage);
    }
    Ok(img)
}

pub fn load_image(path: &Path) -> Result<DynamicImage> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_image(&bytes)
}

/// Bilinear resize of one `h x w` plane with half-pixel centres and edge
/// clamping.
pub fn resize_bilinear(plane: &[f64], h: usize, w: usize, out_h: usize, out_w: usize) -> Vec<f64> {
    let sy = h as f64 / out_h as f64;
    let sx = w as f64 / out_w as f64;
    let axis = |o: usize, scale: f64, n: usize| {
        let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (n - 1) as f64);
        let i0 = src.floor() as usize;
        let i1 = (i0 + 1).min(n - 1);
        (i0, i1, src - i0 as f64)
    };
    let cols: Vec<_> = (0..out_w).map(|x| axis(x, sx, w)).collect();
    let mut out = Vec::with_capacity(out_h * out_w);
    for y in 0..out_h {
        let (y0, y1, fy) = axis(y, sy, h);
        for &(x0, x1, fx) in &cols {
            let top = plane[y0 * w + x0] * (1.0 - fx) + plane[y0 * w + x1] * fx;
            let bottom = plane[y1 * w + x0] * (1.0 - fx) + plane[y1 * w + x1] * fx;
            out.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    out
}

fn rgb_planes(image: &DynamicImage) -> Result<(usize, usize, [Vec<f64>; 3])> {
    let rgb = image.to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    if w == 0 || h == 0 {
        return Err(Error::ZeroSizedImage);
    }
    let mut planes = [vec![0.0; w * h], vec![0.0; w * h], vec![0.0; w * h]];
    for (i, px) in rgb.pixels().enumerate() {
        for c in 0..3 {
            planes[c][i] = px[c] as f64;
        }
    }
    Ok((h, w, planes))
}

/// Resizes to the target size (bilinear, on raw 0-255 values), scales to
/// `[0, 1]`, then normalizes per channel. Grayscale input is replicated to
/// three channels. Output shape `[3, h, w]`.
pub fn preprocess<T: Scalar>(image: &DynamicImage, config: &PreprocessConfig) -> Result<Tensor<T>> {
    config.validate()?;
    let (h, w, planes) = rgb_planes(image)?;
    let (oh, ow) = config.size;
    let mut data = Vec::with_capacity(3 * oh * ow);
    for (c, plane) in planes.iter().enumerate() {
        let resized = resize_bilinear(plane, h, w, oh, ow);
        data.extend(
            resized
                .into_iter()
                .map(|v| T::from_f64_lossy((v / 255.0 - config.mean[c]) / config.std[c])),
        );
    }
    Tensor::new(vec![3, oh, ow], data)
}

/// Inverse of the normalization step: `x * std + mean` per channel.
pub fn unnormalize<T: Scalar>(tensor: &Tensor<T>, config: &PreprocessConfig) -> Result<Tensor<T>> {
    let [c, h, w] = tensor.shape() else {
        return Err(Error::ShapeMismatch(format!(
            "expected [3, h, w], got {:?}",
            tensor.shape()
        )));
    };
    if *c != 3 {
        return Err(Error::ShapeMismatch(format!(
            "expected 3 channels, got {c}"
        )));
    }
    let plane = h * w;
    let data = tensor
        .data()
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let ch = i / plane;
            T::from_f64_lossy(v.widen() * config.std[ch] + config.mean[ch])
        })
        .collect();
    Tensor::new(tensor.shape().to_vec(), data)
}

/// Luminance of the image resized to the target size, in `[0, 1]`, shape
/// `[h, w]`. This is the backdrop for saliency overlays.
pub fn display_base<T: Scalar>(image: &DynamicImage, size: (usize, usize)) -> Result<Tensor<T>> {
    let gray = image.to_luma8();
    let (w, h) = (gray.width() as usize, gray.height() as usize);
    if w == 0 || h == 0 {
        return Err(Error::ZeroSizedImage);
    }
    let plane: Vec<f64> = gray.pixels().map(|p| p[0] as f64).collect();
    let resized = resize_bilinear(&plane, h, w, size.0, size.1);
    Tensor::new(
        vec![size.0, size.1],
        resized
            .into_iter()
            .map(|v| T::from_f64_lossy(v / 255.0))
            .collect(),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentOptions {
    pub flip_prob: f64,
    pub max_rotation_deg: f64,
}

impl Default for AugmentOptions {
    fn default() -> Self {
        Self {
            flip_prob: 0.5,
            max_rotation_deg: 10.0,
        }
    }
}

/// Seeded horizontal flip followed by a rotation about the image centre with
/// an angle uniform in `[-max, max]` degrees (bilinear, zero fill). Works on
/// `[c, h, w]` or `[h, w]` tensors.
pub fn augment<T: Scalar>(image: &Tensor<T>, seed: u64, options: &AugmentOptions) -> Tensor<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let flip = rng.gen::<f64>() < options.flip_prob;
    let angle = if options.max_rotation_deg > 0.0 {
        rng.gen_range(-options.max_rotation_deg..=options.max_rotation_deg)
    } else {
        0.0
    };
    let (c, h, w) = match image.shape() {
        [c, h, w] => (*c, *h, *w),
        [h, w] => (1, *h, *w),
        other => panic!("augment expects [c, h, w] or [h, w], got {other:?}"),
    };
    let mut out = image.clone();
    if flip {
        let src = image.data();
        let dst = out.data_mut();
        for ch in 0..c {
            for y in 0..h {
                let row = (ch * h + y) * w;
                for x in 0..w {
                    dst[row + x] = src[row + w - 1 - x];
                }
            }
        }
    }
    if angle != 0.0 {
        out = rotate(&out, c, h, w, angle.to_radians());
    }
    out
}

fn rotate<T: Scalar>(image: &Tensor<T>, c: usize, h: usize, w: usize, theta: f64) -> Tensor<T> {
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let (sin, cos) = theta.sin_cos();
    let src = image.data();
    let sample = |ch: usize, y: isize, x: isize| -> f64 {
        if y < 0 || x < 0 || y >= h as isize || x >= w as isize {
            0.0
        } else {
            src[(ch * h + y as usize) * w + x as usize].widen()
        }
    };
    let mut out = Vec::with_capacity(src.len());
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                // Inverse-map the output pixel into the source image.
                let dy = y as f64 - cy;
                let dx = x as f64 - cx;
                let sx = cos * dx + sin * dy + cx;
                let sy = -sin * dx + cos * dy + cy;
                let (x0, y0) = (sx.floor(), sy.floor());
                let (fx, fy) = (sx - x0, sy - y0);
                let (x0, y0) = (x0 as isize, y0 as isize);
                let v = sample(ch, y0, x0) * (1.0 - fx) * (1.0 - fy)
                    + sample(ch, y0, x0 + 1) * fx * (1.0 - fy)
                    + sample(ch, y0 + 1, x0) * (1.0 - fx) * fy
                    + sample(ch, y0 + 1, x0 + 1) * fx * fy;
                out.push(T::from_f64_lossy(v));
            }
        }
    }
    Tensor::new(image.shape().to_vec(), out).expect("same shape")
}

/// Per-class stratified split. The overall train size is
/// `round(n * train_fraction)`; each class gets `floor(n_c * f)` and the
/// remaining slots go to the largest fractional remainders (ties in class
/// order). Members are drawn by a seeded shuffle; both halves keep the input
/// order.
pub fn stratified_split(
    dataset: &Dataset,
    train_fraction: f64,
    seed: u64,
) -> Result<(Vec<ImageRecord>, Vec<ImageRecord>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Domain(format!(
            "train_fraction {train_fraction} outside (0, 1)"
        )));
    }
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    let classes = dataset.classes();
    for (ci, c) in classes.iter().enumerate() {
        let idx: Vec<usize> = dataset
            .records
            .iter()
            .enumerate()
            .filter(|(_, r)| &r.label == c)
            .map(|(i, _)| i)
            .collect();
        if idx.is_empty() {
            return Err(Error::EmptyClass(c.clone()));
        }
        by_class.insert(ci, idx);
    }
    let n = dataset.records.len();
    let target = (n as f64 * train_fraction).round() as usize;
    let mut quota: Vec<(usize, usize, f64)> = by_class
        .iter()
        .map(|(&ci, idx)| {
            let exact = idx.len() as f64 * train_fraction;
            (ci, exact.floor() as usize, exact - exact.floor())
        })
        .collect();
    let assigned: usize = quota.iter().map(|q| q.1).sum();
    let mut order: Vec<usize> = (0..quota.len()).collect();
    order.sort_by(|&a, &b| quota[b].2.total_cmp(&quota[a].2).then(a.cmp(&b)));
    for &i in order.iter().take(target.saturating_sub(assigned)) {
        quota[i].1 += 1;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut in_train = vec![false; n];
    for (ci, take, _) in quota {
        let mut idx = by_class[&ci].clone();
        idx.shuffle(&mut rng);
        for &i in idx.iter().take(take) {
            in_train[i] = true;
        }
    }
    let (train, test): (Vec<_>, Vec<_>) = dataset
        .records
        .iter()
        .cloned()
        .zip(in_train)
        .partition(|(_, t)| *t);
    Ok((
        train.into_iter().map(|(r, _)| r).collect(),
        test.into_iter().map(|(r, _)| r).collect(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::{GrayImage, Luma};

    #[test]
    fn severity_bins() {
        assert_eq!(severity_bin(1.0).unwrap(), Severity::Mild);
        assert_eq!(severity_bin(3.0).unwrap(), Severity::Medium);
        assert_eq!(severity_bin(5.0).unwrap(), Severity::Severe);
        assert_eq!(severity_bin(2.0).unwrap(), Severity::Medium);
        assert_eq!(severity_bin(4.0).unwrap(), Severity::Medium);
        assert_eq!(severity_bin(0.0).unwrap(), Severity::Mild);
        assert_eq!(severity_bin(6.0).unwrap(), Severity::Severe);
        assert!(matches!(severity_bin(7.0), Err(Error::ScoreOutOfRange(_))));
        assert!(severity_bin(-0.5).is_err());
        assert!(severity_bin(f64::NAN).is_err());
    }

    #[test]
    fn manifest_parsing() {
        let ds = Dataset::from_json(
            r#"{"scenario": "covid_vs_normal", "records": [
                {"image_id": "a", "path": "a.png", "label": "covid"},
                {"image_id": "b", "path": "/abs/b.png", "label": "normal"}
            ]}"#,
            Some(Path::new("/data")),
        )
        .unwrap();
        assert_eq!(ds.scenario, Scenario::CovidVsNormal);
        assert_eq!(ds.records.len(), 2);
        assert_eq!(ds.records[0].path, PathBuf::from("/data/a.png"));
        assert_eq!(ds.records[1].path, PathBuf::from("/abs/b.png"));
    }

    #[test]
    fn manifest_errors() {
        let parse = |s: &str| Dataset::from_json(s, None);
        assert!(matches!(parse("{"), Err(Error::ManifestParse(_))));
        assert!(matches!(
            parse(
                r#"{"scenario": "covid_severity", "records": [{"image_id": "a", "path": "a", "severity_score": 7}]}"#
            ),
            Err(Error::ScoreOutOfRange(_))
        ));
        assert!(matches!(
            parse(
                r#"{"scenario": "covid_severity", "records": [{"image_id": "a", "path": "a", "label": "mild"}]}"#
            ),
            Err(Error::MissingScore(_))
        ));
        assert!(matches!(
            parse(
                r#"{"scenario": "covid_vs_normal", "records": [
                {"image_id": "a", "path": "a", "label": "covid"},
                {"image_id": "a", "path": "b", "label": "normal"}]}"#
            ),
            Err(Error::DuplicateId(_))
        ));
        assert!(matches!(
            parse(
                r#"{"scenario": "covid_vs_normal", "records": [{"image_id": "a", "path": "a", "label": "flu"}]}"#
            ),
            Err(Error::UnknownLabel(_))
        ));
        assert!(matches!(
            parse(
                r#"{"scenario": "covid_vs_normal", "records": [{"image_id": "a", "path": "a", "label": "covid", "severity_score": 3}]}"#
            ),
            Err(Error::UnexpectedScore(_))
        ));
        assert!(matches!(
            parse(
                r#"{"scenario": "covid_severity", "records": [{"image_id": "a", "path": "a", "label": "mild", "severity_score": 5}]}"#
            ),
            Err(Error::LabelScoreMismatch { .. })
        ));
    }

    #[test]
    fn severity_labels_derived_from_scores() {
        let ds = Dataset::from_json(
            r#"{"scenario": "covid_severity", "records": [
                {"image_id": "a", "path": "a", "severity_score": 1.5},
                {"image_id": "b", "path": "b", "severity_score": 4.0}
            ]}"#,
            None,
        )
        .unwrap();
        assert_eq!(ds.records[0].label, "mild");
        assert_eq!(ds.records[1].label, "medium");
    }

    #[test]
    fn identity_normalization() {
        let img = GrayImage::from_fn(224, 224, |x, y| Luma([((x * 7 + y * 3) % 256) as u8]));
        let cfg = PreprocessConfig {
            size: (224, 224),
            mean: [0.0; 3],
            std: [1.0; 3],
        };
        let t: Tensor<f64> = preprocess(&DynamicImage::ImageLuma8(img.clone()), &cfg).unwrap();
        assert_eq!(t.shape(), &[3, 224, 224]);
        for c in 0..3 {
            for (i, px) in img.pixels().enumerate() {
                assert!((t.data()[c * 224 * 224 + i] - px[0] as f64 / 255.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn constant_image_closed_form_and_roundtrip() {
        let img = DynamicImage::ImageLuma8(GrayImage::from_pixel(50, 30, Luma([200])));
        let cfg = PreprocessConfig::default();
        let t: Tensor<f32> = preprocess(&img, &cfg).unwrap();
        for c in 0..3 {
            let expected = ((200.0 / 255.0 - cfg.mean[c]) / cfg.std[c]) as f32;
            assert!(t.data()[c * 224 * 224..(c + 1) * 224 * 224]
                .iter()
                .all(|&v| v == expected));
        }
        let back = unnormalize(&t, &cfg).unwrap();
        assert!(back.data().iter().all(|v| (v - 200.0 / 255.0).abs() < 1e-6));
    }

    #[test]
    fn bad_config_and_bytes() {
        let img = DynamicImage::ImageLuma8(GrayImage::from_pixel(2, 2, Luma([1])));
        let cfg = PreprocessConfig {
            std: [0.0, 1.0, 1.0],
            ..Default::default()
        };
        assert!(preprocess::<f32>(&img, &cfg).is_err());
        assert!(matches!(
            decode_image(b"not an image"),
            Err(Error::Decode(_))
        ));
    }

    #[test]
    fn augment_identity_and_flip() {
        let t = Tensor::<f32>::from_fn(&[3, 4, 5], |i| i as f32);
        let none = AugmentOptions {
            flip_prob: 0.0,
            max_rotation_deg: 0.0,
        };
        assert_eq!(augment(&t, 3, &none), t);
        let flip = AugmentOptions {
            flip_prob: 1.0,
            max_rotation_deg: 0.0,
        };
        let f = augment(&t, 3, &flip);
        assert_eq!(f.data()[0], 4.0);
        assert_eq!(f.data()[4], 0.0);
        assert_eq!(augment(&f, 8, &flip), t);
    }

    #[test]
    fn augment_seeded() {
        let t = Tensor::<f32>::from_fn(&[1, 16, 16], |i| (i % 7) as f32);
        let opts = AugmentOptions::default();
        let a = augment(&t, 42, &opts);
        let b = augment(&t, 42, &opts);
        assert_eq!(
            a.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn rotation_by_small_angle_keeps_centre() {
        let t = Tensor::<f64>::full(&[1, 9, 9], 1.0);
        let r = rotate(&t, 1, 9, 9, 5f64.to_radians());
        assert!((r.data()[4 * 9 + 4] - 1.0).abs() < 1e-12);
        // Corners pick up zero fill.
        assert!(r.data()[0] < 1.0);
    }

    fn dataset(counts: &[(&str, usize)], scenario: Scenario) -> Dataset {
        let mut records = Vec::new();
        for (label, n) in counts {
            for i in 0..*n {
                records.push(ImageRecord {
                    image_id: format!("{label}{i}"),
                    path: PathBuf::from("x.png"),
                    label: label.to_string(),
                    severity_score: None,
                });
            }
        }
        Dataset { scenario, records }
    }

    #[test]
    fn split_exact_division() {
        let ds = dataset(&[("covid", 10), ("normal", 10)], Scenario::CovidVsNormal);
        let (train, test) = stratified_split(&ds, 0.7, 1).unwrap();
        let count = |v: &[ImageRecord], l: &str| v.iter().filter(|r| r.label == l).count();
        assert_eq!((count(&train, "covid"), count(&train, "normal")), (7, 7));
        assert_eq!((count(&test, "covid"), count(&test, "normal")), (3, 3));
        assert_eq!(stratified_split(&ds, 0.7, 1).unwrap(), (train, test));
    }

    #[test]
    fn split_rejects_empty_class() {
        let ds = dataset(&[("covid", 4)], Scenario::CovidVsNormal);
        assert!(
            matches!(stratified_split(&ds, 0.7, 0), Err(Error::EmptyClass(c)) if c == "normal")
        );
        let ds = dataset(&[("covid", 4), ("normal", 2)], Scenario::CovidVsNormal);
        assert!(stratified_split(&ds, 1.0, 0).is_err());
    }
}
