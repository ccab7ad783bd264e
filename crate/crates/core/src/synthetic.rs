//! Synthetic severity fixture: chest-radiograph-like images whose opacity
//! patches differ in geometry per class, and a hand-built two-block CNN that
//! separates them.
//!
//! Geometry, on a 224-pixel frame:
//! - mild: one small patch in the upper half of one lung;
//! - medium: one patch in the lower half of each lung;
//! - severe: tall patches covering most of both lungs.
//!
//! The network thresholds pixel brightness (block 1), pools to a 14x14 grid
//! (block 2) and scores upper-zone and lower-zone opacity with a dense head.

use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, Luma};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::datapipe::{save_manifest, Dataset, ImageRecord, PreprocessConfig, Scenario, Severity};
use crate::error::{Error, Result};
use crate::nn::{Conv2d, Dense, Layer, MaxPool2d, Network};

const BACKGROUND: f64 = 0.05;
const BODY: f64 = 0.35;
const LUNG: f64 = 0.15;
const OPACITY: f64 = 0.85;
/// Brightness above which block 1 responds.
const THRESHOLD: f64 = 0.5;
const GRID: usize = 14;

/// Lung fields in 224-frame coordinates: `(x0, x1, y0, y1)`.
const LEFT_LUNG: (f64, f64, f64, f64) = (28.0, 100.0, 30.0, 200.0);
const RIGHT_LUNG: (f64, f64, f64, f64) = (124.0, 196.0, 30.0, 200.0);
const ZONE_SPLIT_Y: f64 = 112.0;

fn in_ellipse(x: f64, y: f64, (x0, x1, y0, y1): (f64, f64, f64, f64)) -> bool {
    let cx = (x0 + x1) / 2.0;
    let cy = (y0 + y1) / 2.0;
    let rx = (x1 - x0) / 2.0;
    let ry = (y1 - y0) / 2.0;
    ((x - cx) / rx).powi(2) + ((y - cy) / ry).powi(2) <= 1.0
}

/// Axis-aligned patch in 224-frame coordinates.
#[derive(Debug, Clone, Copy)]
struct Patch {
    x0: f64,
    y0: f64,
    w: f64,
    h: f64,
}

impl Patch {
    fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x0 && x < self.x0 + self.w && y >= self.y0 && y < self.y0 + self.h
    }
}

fn patches(class: Severity, rng: &mut ChaCha8Rng) -> Vec<Patch> {
    let mut jitter = |r: f64| rng.gen_range(-r..=r);
    match class {
        Severity::Mild => {
            let s = 28.0 + jitter(4.0);
            let left = jitter(1.0) < 0.0;
            let (lx0, lx1, _, _) = if left { LEFT_LUNG } else { RIGHT_LUNG };
            vec![Patch {
                x0: (lx0 + lx1) / 2.0 - s / 2.0 + jitter(6.0),
                y0: 56.0 + jitter(8.0),
                w: s,
                h: s,
            }]
        }
        Severity::Medium => [LEFT_LUNG, RIGHT_LUNG]
            .iter()
            .map(|&(lx0, lx1, _, _)| {
                let s = 40.0 + jitter(4.0);
                Patch {
                    x0: (lx0 + lx1) / 2.0 - s / 2.0 + jitter(6.0),
                    y0: 132.0 + jitter(8.0),
                    w: s,
                    h: s,
                }
            })
            .collect(),
        Severity::Severe => [LEFT_LUNG, RIGHT_LUNG]
            .iter()
            .map(|&(lx0, lx1, _, _)| Patch {
                x0: lx0 + 8.0 + jitter(4.0),
                y0: 44.0 + jitter(6.0),
                w: lx1 - lx0 - 16.0 + jitter(4.0),
                h: 140.0 + jitter(8.0),
            })
            .collect(),
    }
}

/// Renders one synthetic radiograph of side `size`.
pub fn severity_image(class: Severity, size: u32, rng: &mut ChaCha8Rng) -> GrayImage {
    let patches = patches(class, rng);
    let scale = 224.0 / size as f64;
    let mut img = GrayImage::new(size, size);
    for (px, py, pixel) in img.enumerate_pixels_mut() {
        let x = (px as f64 + 0.5) * scale;
        let y = (py as f64 + 0.5) * scale;
        let mut v = if !(16.0..208.0).contains(&x) || y < 12.0 {
            BACKGROUND
        } else if in_ellipse(x, y, LEFT_LUNG) || in_ellipse(x, y, RIGHT_LUNG) {
            if patches.iter().any(|p| p.contains(x, y)) {
                OPACITY
            } else {
                LUNG
            }
        } else {
            BODY
        };
        v += rng.gen_range(-0.04..=0.04);
        *pixel = Luma([(v.clamp(0.0, 1.0) * 255.0).round() as u8]);
    }
    img
}

/// Score drawn uniformly from the class's bin, at 0.1 resolution.
fn score_for(class: Severity, rng: &mut ChaCha8Rng) -> f64 {
    let (lo, hi) = match class {
        Severity::Mild => (0, 19),
        Severity::Medium => (20, 40),
        Severity::Severe => (41, 60),
    };
    rng.gen_range(lo..=hi) as f64 / 10.0
}

/// Writes `per_class` images of each severity class under `dir/images/` and a
/// `dir/manifest.json` for the severity scenario.
pub fn write_severity_dataset(
    dir: &Path,
    per_class: usize,
    size: u32,
    seed: u64,
) -> Result<Dataset> {
    let images = dir.join("images");
    fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::with_capacity(per_class * 3);
    for i in 0..per_class {
        for class in [Severity::Mild, Severity::Medium, Severity::Severe] {
            let image_id = format!("{}-{i:03}", class.as_str());
            let img = severity_image(class, size, &mut rng);
            let rel = PathBuf::from("images").join(format!("{image_id}.png"));
            let path = dir.join(&rel);
            img.save(&path).map_err(|e| Error::Encode(e.to_string()))?;
            records.push(ImageRecord {
                image_id,
                path: rel,
                label: class.as_str().to_string(),
                severity_score: Some(score_for(class, &mut rng)),
            });
        }
    }
    let dataset = Dataset {
        scenario: Scenario::CovidSeverity,
        records,
    };
    save_manifest(&dataset, &dir.join("manifest.json"))?;
    Ok(dataset)
}

/// Hand-constructed classifier for the fixture, expecting `3 x 224 x 224`
/// input normalized with `config`. Class order: mild, medium, severe.
pub fn severity_network(config: &PreprocessConfig) -> Result<Network<f32>> {
    if config.size != (224, 224) {
        return Err(Error::ShapeMismatch(format!(
            "fixture network is built for 224x224 input, config asks for {:?}",
            config.size
        )));
    }
    // Block 1: 4x4 stride-4 mean brightness minus the threshold.
    let mut w1 = Vec::with_capacity(3 * 16);
    for c in 0..3 {
        w1.extend(std::iter::repeat_n((config.std[c] / 48.0) as f32, 16));
    }
    let mean_offset = config.mean.iter().sum::<f64>() / 3.0;
    let conv1 = Conv2d::new(
        3,
        1,
        (4, 4),
        4,
        0,
        w1,
        vec![(mean_offset - THRESHOLD) as f32],
    )?;
    // Block 2: identity and 3x3 box-average channels.
    let mut w2 = vec![0.0f32; 2 * 9];
    w2[4] = 1.0;
    w2[9..].fill(1.0 / 9.0);
    let conv2 = Conv2d::new(1, 2, (3, 3), 1, 1, w2, vec![0.0, 0.0])?;

    let cells = GRID * GRID;
    let mut head = vec![0.0f32; 3 * 2 * cells];
    for ch in 0..2 {
        for gy in 0..GRID {
            for gx in 0..GRID {
                let upper = ((gy as f64 + 0.5) * 16.0) < ZONE_SPLIT_Y;
                let i = ch * cells + gy * GRID + gx;
                let sign = if upper { 1.0 } else { -1.0 };
                head[i] = sign / 2.0;
                head[2 * cells + i] = -sign / 2.0;
                head[4 * cells + i] = 0.25;
            }
        }
    }
    let dense = Dense::new(2 * cells, 3, head, vec![0.0, 0.0, -3.0])?;
    Network::new(
        vec![
            Layer::Conv2d(conv1),
            Layer::Relu,
            Layer::MaxPool2d(MaxPool2d::new(2, 2)?),
            Layer::Conv2d(conv2),
            Layer::Relu,
            Layer::MaxPool2d(MaxPool2d::new(2, 2)?),
            Layer::Flatten,
            Layer::Dense(dense),
        ],
        [3, 224, 224],
        Scenario::CovidSeverity.classes(),
    )
}

/// Random small network with a valid shape stack: up to two
/// conv-ReLU(-maxpool) blocks, an optional hidden dense-ReLU layer, and a
/// dense head with 1-4 classes. Weights are uniform in `[-1, 1]`, biases in
/// `[-0.5, 0.5]` (or zero when `with_bias` is false).
pub fn random_network<T: crate::Scalar>(rng: &mut impl Rng, with_bias: bool) -> Network<T> {
    let uniform = |n: usize, r: f64, rng: &mut dyn rand::RngCore| -> Vec<T> {
        (0..n)
            .map(|_| T::from_f64_lossy(rng.gen_range(-r..=r)))
            .collect()
    };
    loop {
        let c = rng.gen_range(1..=3);
        let h = rng.gen_range(4..=8);
        let w = rng.gen_range(4..=8);
        let mut shape = vec![c, h, w];
        let mut layers: Vec<Layer<T>> = Vec::new();
        let blocks = rng.gen_range(0..=2);
        let mut ok = true;
        for _ in 0..blocks {
            let out = rng.gen_range(1..=3);
            let k = rng.gen_range(1..=3);
            let stride = rng.gen_range(1..=2);
            let padding = rng.gen_range(0..=1);
            let bias_r = if with_bias { 0.5 } else { 0.0 };
            let conv = Conv2d::new(
                shape[0],
                out,
                (k, k),
                stride,
                padding,
                uniform(out * shape[0] * k * k, 1.0, rng),
                uniform(out, bias_r, rng),
            )
            .expect("consistent conv");
            let layer = Layer::Conv2d(conv);
            match layer.output_shape(&shape) {
                Ok(s) => shape = s,
                Err(_) => {
                    ok = false;
                    break;
                }
            }
            layers.push(layer);
            layers.push(Layer::Relu);
            if rng.gen_bool(0.5) && shape[1] >= 2 && shape[2] >= 2 {
                let pool =
                    Layer::MaxPool2d(MaxPool2d::new(2, rng.gen_range(1..=2)).expect("positive"));
                shape = pool.output_shape(&shape).expect("window fits");
                layers.push(pool);
            }
        }
        if !ok {
            continue;
        }
        layers.push(Layer::Flatten);
        let mut dim: usize = shape.iter().product();
        let bias_r = if with_bias { 0.5 } else { 0.0 };
        if rng.gen_bool(0.7) {
            let hidden = rng.gen_range(2..=6);
            layers.push(Layer::Dense(
                Dense::new(
                    dim,
                    hidden,
                    uniform(dim * hidden, 1.0, rng),
                    uniform(hidden, bias_r, rng),
                )
                .expect("consistent dense"),
            ));
            layers.push(Layer::Relu);
            dim = hidden;
        }
        let classes = rng.gen_range(1..=4);
        layers.push(Layer::Dense(
            Dense::new(
                dim,
                classes,
                uniform(dim * classes, 1.0, rng),
                uniform(classes, bias_r, rng),
            )
            .expect("consistent dense"),
        ));
        let names = (0..classes).map(|i| format!("class{i}")).collect();
        return Network::new(layers, [c, h, w], names).expect("stack built from valid shapes");
    }
}
