//! DeepLIFT multipliers (rescale rule) and DeepSHAP baseline averaging.
//!
//! Multipliers are propagated from a target logit back to the input one layer
//! at a time. Linear layers (dense, conv) pass multipliers through their
//! weights; ReLU uses `Δy / Δx`, falling back to the gradient when
//! `|Δx| < RESCALE_EPSILON`; max pooling routes each window's multiplier to
//! the input's argmax element, rescaled by `Δy / Δx` of that element. The
//! contribution of an input element is `multiplier * Δx`, so contributions
//! sum to `Δt = t(input) - t(baseline)`.
//!
//! Multipliers are carried in `f64` and contributions rounded to the storage
//! scalar at the end.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{ActivationTrace, Layer, Network};
use crate::scalar::{decode_f32_le, encode_f32_le, Scalar};
use crate::tensor::Tensor;

/// Below this input delta the rescale rule falls back to the gradient.
pub const RESCALE_EPSILON: f64 = 1e-7;

/// Reference input that defines `Δx` and `Δt`.
#[derive(Debug, Clone, PartialEq)]
pub struct Baseline<T> {
    reference: Tensor<T>,
}

impl<T: Scalar> Baseline<T> {
    pub fn new(reference: Tensor<T>) -> Result<Self> {
        if !reference.is_finite() {
            return Err(Error::Domain("baseline contains non-finite values".into()));
        }
        Ok(Self { reference })
    }

    /// The all-zeros reference. In normalized input space this is the
    /// per-channel dataset mean image.
    pub fn zeros(shape: [usize; 3]) -> Self {
        Self {
            reference: Tensor::zeros(&shape),
        }
    }

    pub fn reference(&self) -> &Tensor<T> {
        &self.reference
    }
}

/// Per-element contribution scores for one image and one target class.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributionMap<T> {
    pub image_id: String,
    pub target_class: usize,
    /// Shaped like the network input.
    pub contributions: Tensor<T>,
    /// Target logit difference `t(input) - t(baseline)`, averaged over
    /// baselines.
    pub delta_t: f64,
    pub baseline_count: usize,
}

impl<T: Scalar> AttributionMap<T> {
    pub fn with_image_id(mut self, image_id: impl Into<String>) -> Self {
        self.image_id = image_id.into();
        self
    }

    /// `|Σ C − Δt|`.
    pub fn summation_error(&self) -> f64 {
        (self.contributions.sum() - self.delta_t).abs()
    }

    /// Spatial per-pixel scores: contributions summed over channels,
    /// shape `[h, w]`.
    pub fn pixel_scores(&self) -> Result<Tensor<f64>> {
        let shape = self.contributions.shape();
        let (c, h, w) = match shape {
            [c, h, w] => (*c, *h, *w),
            [h, w] => (1, *h, *w),
            _ => {
                return Err(Error::ShapeMismatch(format!(
                    "attribution map of shape {shape:?} has no spatial layout"
                )))
            }
        };
        let data = self.contributions.data();
        let mut out = vec![0.0f64; h * w];
        for ch in 0..c {
            for (i, o) in out.iter_mut().enumerate() {
                *o += data[ch * h * w + i].widen();
            }
        }
        Tensor::new(vec![h, w], out)
    }
}

/// Elementwise positive and negative parts of an attribution map.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyPair<T> {
    pub favorable: Tensor<T>,
    pub glum: Tensor<T>,
}

/// Splits a map into its favorable (`max(C, 0)`) and glum (`min(C, 0)`)
/// parts.
pub fn split_saliency<T: Scalar>(map: &AttributionMap<T>) -> SaliencyPair<T> {
    let c = &map.contributions;
    SaliencyPair {
        favorable: c.map(|v| if v > T::zero() { v } else { T::zero() }),
        glum: c.map(|v| if v < T::zero() { v } else { T::zero() }),
    }
}

fn check_trace<T: Scalar>(trace: &ActivationTrace<T>) -> Result<()> {
    match trace.first_non_finite() {
        Some(layer) => Err(Error::NonFiniteActivation { layer }),
        None => Ok(()),
    }
}

fn check_class<T: Scalar>(net: &Network<T>, target_class: usize) -> Result<()> {
    if target_class >= net.num_classes() {
        return Err(Error::ClassIndexOutOfRange {
            index: target_class,
            classes: net.num_classes(),
        });
    }
    Ok(())
}

fn delta(x: &Tensor<impl Scalar>, b: &Tensor<impl Scalar>, i: usize) -> f64 {
    x.data()[i].widen() - b.data()[i].widen()
}

/// Backpropagates multipliers from `target_class`'s logit to the input and
/// returns `(contributions, Δt)` in `f64`.
fn contributions_from_traces<T: Scalar>(
    net: &Network<T>,
    x: &ActivationTrace<T>,
    b: &ActivationTrace<T>,
    target_class: usize,
) -> Result<(Vec<f64>, f64)> {
    let n_out = x.logits().len();
    let mut m = vec![0.0f64; n_out];
    m[target_class] = 1.0;

    for (li, layer) in net.layers().iter().enumerate().rev() {
        let xin = x.input(li);
        let bin = b.input(li);
        let mut m_in = vec![0.0f64; xin.len()];
        match layer {
            Layer::Dense(d) => {
                for (o, &mo) in m.iter().enumerate() {
                    if mo == 0.0 {
                        continue;
                    }
                    let row = &d.weight[o * d.in_dim..(o + 1) * d.in_dim];
                    for (mi, w) in m_in.iter_mut().zip(row) {
                        *mi += mo * w.widen();
                    }
                }
            }
            Layer::Conv2d(conv) => {
                let (h, w) = (xin.shape()[1], xin.shape()[2]);
                let out_shape = x.output(li).shape();
                let (oh, ow) = (out_shape[1], out_shape[2]);
                let pad = conv.padding as isize;
                for o in 0..conv.out_channels {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let mo = m[(o * oh + oy) * ow + ox];
                            if mo == 0.0 {
                                continue;
                            }
                            for c in 0..conv.in_channels {
                                for ky in 0..conv.kernel.0 {
                                    let iy = (oy * conv.stride + ky) as isize - pad;
                                    if iy < 0 || iy >= h as isize {
                                        continue;
                                    }
                                    let row = (c * h + iy as usize) * w;
                                    for kx in 0..conv.kernel.1 {
                                        let ix = (ox * conv.stride + kx) as isize - pad;
                                        if ix < 0 || ix >= w as isize {
                                            continue;
                                        }
                                        m_in[row + ix as usize] +=
                                            mo * conv.w(o, c, ky, kx).widen();
                                    }
                                }
                            }
                        }
                    }
                }
            }
            Layer::Relu => {
                let (xout, bout) = (x.output(li), b.output(li));
                for (i, mi) in m_in.iter_mut().enumerate() {
                    let dx = delta(xin, bin, i);
                    let ratio = if dx.abs() >= RESCALE_EPSILON {
                        delta(xout, bout, i) / dx
                    } else if xin.data()[i] > T::zero() {
                        1.0
                    } else {
                        0.0
                    };
                    *mi = m[i] * ratio;
                }
            }
            Layer::MaxPool2d(pool) => {
                let (xout, bout) = (x.output(li), b.output(li));
                let argmax = pool.argmax_indices(xin);
                for (o, &p) in argmax.iter().enumerate() {
                    let mo = m[o];
                    if mo == 0.0 {
                        continue;
                    }
                    let dy = delta(xout, bout, o);
                    let dx = delta(xin, bin, p);
                    if dx.abs() >= RESCALE_EPSILON {
                        m_in[p] += mo * dy / dx;
                        continue;
                    }
                    // The input's argmax did not move; hand Δy to the window
                    // element with the largest |Δx| instead.
                    let (q, dq) = pool
                        .window_indices(xin.shape(), o)
                        .into_iter()
                        .map(|i| (i, delta(xin, bin, i)))
                        .fold((p, dx), |best, cur| {
                            if cur.1.abs() > best.1.abs() {
                                cur
                            } else {
                                best
                            }
                        });
                    if dq.abs() >= RESCALE_EPSILON {
                        m_in[q] += mo * dy / dq;
                    } else {
                        m_in[p] += mo;
                    }
                }
            }
            Layer::Flatten => m_in.copy_from_slice(&m),
        }
        m = m_in;
    }

    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteActivation { layer: 0 });
    }
    let (xi, bi) = (x.input(0), b.input(0));
    let contributions = m
        .iter()
        .enumerate()
        .map(|(i, mi)| mi * delta(xi, bi, i))
        .collect();
    let dt = x.logits().data()[target_class].widen() - b.logits().data()[target_class].widen();
    Ok((contributions, dt))
}

/// Forward traces of one input and a set of baselines, shared across target
/// classes.
pub struct TracedInput<'a, T> {
    net: &'a Network<T>,
    input: ActivationTrace<T>,
    baselines: Vec<ActivationTrace<T>>,
}

impl<'a, T: Scalar> TracedInput<'a, T> {
    pub fn new(net: &'a Network<T>, input: &Tensor<T>, baselines: &[Baseline<T>]) -> Result<Self> {
        if baselines.is_empty() {
            return Err(Error::EmptyBaselineSet);
        }
        let input = net.forward(input)?;
        check_trace(&input)?;
        let baselines = baselines
            .par_iter()
            .map(|b| {
                let t = net.forward(b.reference())?;
                check_trace(&t)?;
                Ok(t)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            net,
            input,
            baselines,
        })
    }

    pub fn logits(&self) -> &Tensor<T> {
        self.input.logits()
    }

    /// DeepSHAP map for one class: the mean of the per-baseline DeepLIFT
    /// maps.
    pub fn attribute(&self, target_class: usize) -> Result<AttributionMap<T>> {
        check_class(self.net, target_class)?;
        let n = self.baselines.len() as f64;
        let mut sum = vec![0.0f64; self.input.input(0).len()];
        let mut dt_sum = 0.0;
        for b in &self.baselines {
            let (c, dt) = contributions_from_traces(self.net, &self.input, b, target_class)?;
            for (s, v) in sum.iter_mut().zip(c) {
                *s += v;
            }
            dt_sum += dt;
        }
        let shape = self.input.input(0).shape().to_vec();
        let data = sum.into_iter().map(|v| T::from_f64_lossy(v / n)).collect();
        Ok(AttributionMap {
            image_id: String::new(),
            target_class,
            contributions: Tensor::new(shape, data)?,
            delta_t: dt_sum / n,
            baseline_count: self.baselines.len(),
        })
    }
}

/// DeepLIFT attribution of `target_class`'s logit against a single baseline.
pub fn deeplift<T: Scalar>(
    net: &Network<T>,
    input: &Tensor<T>,
    baseline: &Baseline<T>,
    target_class: usize,
) -> Result<AttributionMap<T>> {
    check_class(net, target_class)?;
    TracedInput::new(net, input, std::slice::from_ref(baseline))?.attribute(target_class)
}

/// DeepSHAP attribution: DeepLIFT averaged over a set of baselines.
pub fn deepshap<T: Scalar>(
    net: &Network<T>,
    input: &Tensor<T>,
    baselines: &[Baseline<T>],
    target_class: usize,
) -> Result<AttributionMap<T>> {
    check_class(net, target_class)?;
    TracedInput::new(net, input, baselines)?.attribute(target_class)
}

/// One DeepSHAP map per class, forwarding the input and each baseline once.
pub fn attribute_all_classes<T: Scalar>(
    net: &Network<T>,
    input: &Tensor<T>,
    baselines: &[Baseline<T>],
) -> Result<Vec<AttributionMap<T>>> {
    let traced = TracedInput::new(net, input, baselines)?;
    (0..net.num_classes())
        .map(|c| traced.attribute(c))
        .collect()
}

/// Metadata written next to an exported contribution blob.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionRecord {
    pub image_id: String,
    pub class_name: String,
    pub delta_t: f64,
    pub baseline_count: usize,
    pub shape: Vec<usize>,
}

/// Writes `<dir>/<image_id>.<class>.json` and `<dir>/<image_id>.<class>.bin`.
pub fn write_attribution<T: Scalar>(
    dir: &Path,
    map: &AttributionMap<T>,
    class_name: &str,
) -> Result<AttributionRecord> {
    let record = AttributionRecord {
        image_id: map.image_id.clone(),
        class_name: class_name.to_string(),
        delta_t: map.delta_t,
        baseline_count: map.baseline_count,
        shape: map.contributions.shape().to_vec(),
    };
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let stem = format!("{}.{}", map.image_id, class_name);
    let json_path = dir.join(format!("{stem}.json"));
    let bin_path = dir.join(format!("{stem}.bin"));
    let json =
        serde_json::to_vec_pretty(&record).map_err(|e| Error::ManifestParse(e.to_string()))?;
    fs::write(&json_path, json).map_err(|e| Error::io(&json_path, e))?;
    fs::write(&bin_path, encode_f32_le(map.contributions.data()))
        .map_err(|e| Error::io(&bin_path, e))?;
    Ok(record)
}

/// Reads back a map written by [`write_attribution`]. The class index is
/// resolved against `class_names`.
pub fn read_attribution<T: Scalar>(
    dir: &Path,
    image_id: &str,
    class_name: &str,
    class_names: &[String],
) -> Result<AttributionMap<T>> {
    let stem = format!("{image_id}.{class_name}");
    let json_path = dir.join(format!("{stem}.json"));
    let bin_path = dir.join(format!("{stem}.bin"));
    let json = fs::read(&json_path).map_err(|e| Error::io(&json_path, e))?;
    let record: AttributionRecord =
        serde_json::from_slice(&json).map_err(|e| Error::ManifestParse(e.to_string()))?;
    let bytes = fs::read(&bin_path).map_err(|e| Error::io(&bin_path, e))?;
    let n: usize = record.shape.iter().product();
    if bytes.len() != n * 4 {
        return Err(Error::BlobSizeMismatch {
            expected: n * 4,
            actual: bytes.len(),
        });
    }
    let target_class = class_names
        .iter()
        .position(|c| c == &record.class_name)
        .ok_or_else(|| Error::UnknownLabel(record.class_name.clone()))?;
    Ok(AttributionMap {
        image_id: record.image_id,
        target_class,
        contributions: Tensor::new(record.shape, decode_f32_le(&bytes))?,
        delta_t: record.delta_t,
        baseline_count: record.baseline_count,
    })
}
