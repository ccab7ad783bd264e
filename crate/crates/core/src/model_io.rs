//! Portable weight format: a `model.json` manifest plus a `model.bin` blob of
//! raw little-endian 32-bit reals.
//!
//! Offsets and lengths in the manifest count reals, not bytes. Convolution
//! kernels are stored `[out_ch][in_ch][kh][kw]`, dense weights `[out][in]`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Conv2d, Dense, Layer, LayerKind, MaxPool2d, Network};
use crate::scalar::{decode_f32_le, encode_f32_le, Scalar};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelManifest {
    pub format_version: u32,
    pub input_shape: [usize; 3],
    pub class_names: Vec<String>,
    pub layers: Vec<LayerEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerEntry {
    pub kind: LayerKind,
    #[serde(default)]
    pub params: LayerParams,
    #[serde(default)]
    pub weight_offset: usize,
    #[serde(default)]
    pub weight_len: usize,
    #[serde(default)]
    pub bias_offset: usize,
    #[serde(default)]
    pub bias_len: usize,
}

/// Kind-specific layer parameters. Unused fields are omitted on write.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub in_channels: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_channels: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel: Option<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stride: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub padding: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub in_dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dim: Option<usize>,
}

fn required(value: Option<usize>, layer: usize, name: &str) -> Result<usize> {
    value.ok_or_else(|| Error::ManifestParse(format!("layer {layer}: missing params.{name}")))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Loads and shape-validates a network from a manifest and weight blob.
pub fn load_network<T: Scalar>(manifest_path: &Path, blob_path: &Path) -> Result<Network<T>> {
    let manifest = read_file(manifest_path)?;
    let blob = read_file(blob_path)?;
    let manifest: ModelManifest =
        serde_json::from_slice(&manifest).map_err(|e| Error::ManifestParse(e.to_string()))?;
    network_from_parts(&manifest, &blob)
}

pub fn network_from_parts<T: Scalar>(manifest: &ModelManifest, blob: &[u8]) -> Result<Network<T>> {
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::ManifestParse(format!(
            "unsupported format_version {}",
            manifest.format_version
        )));
    }
    let declared: usize = manifest
        .layers
        .iter()
        .map(|l| l.weight_len + l.bias_len)
        .sum();
    if blob.len() != declared * 4 {
        return Err(Error::BlobSizeMismatch {
            expected: declared * 4,
            actual: blob.len(),
        });
    }
    let reals: Vec<T> = decode_f32_le(blob);
    let slice = |layer: usize, offset: usize, len: usize| -> Result<Vec<T>> {
        reals
            .get(offset..offset + len)
            .map(<[T]>::to_vec)
            .ok_or_else(|| {
                Error::ShapeMismatch(format!(
                    "layer {layer}: range {offset}..{} outside blob of {} reals",
                    offset + len,
                    reals.len()
                ))
            })
    };

    let mut shape = manifest.input_shape.to_vec();
    let mut layers = Vec::with_capacity(manifest.layers.len());
    for (i, entry) in manifest.layers.iter().enumerate() {
        let p = &entry.params;
        let layer = match entry.kind {
            LayerKind::Conv2d => {
                if shape.len() != 3 {
                    return Err(Error::ShapeMismatch(format!(
                        "layer {i}: conv2d needs a [c, h, w] input, got {shape:?}"
                    )));
                }
                let in_channels = p.in_channels.unwrap_or(shape[0]);
                let out_channels = required(p.out_channels, i, "out_channels")?;
                let [kh, kw] = p.kernel.ok_or_else(|| {
                    Error::ManifestParse(format!("layer {i}: missing params.kernel"))
                })?;
                let implied_w = out_channels * in_channels * kh * kw;
                if entry.weight_len != implied_w || entry.bias_len != out_channels {
                    return Err(Error::ShapeMismatch(format!(
                        "layer {i}: conv2d implies {implied_w} weights and {out_channels} biases, \
                         manifest declares {} and {}",
                        entry.weight_len, entry.bias_len
                    )));
                }
                Layer::Conv2d(Conv2d::new(
                    in_channels,
                    out_channels,
                    (kh, kw),
                    p.stride.unwrap_or(1),
                    p.padding.unwrap_or(0),
                    slice(i, entry.weight_offset, entry.weight_len)?,
                    slice(i, entry.bias_offset, entry.bias_len)?,
                )?)
            }
            LayerKind::Dense => {
                let in_dim = required(p.in_dim, i, "in_dim")?;
                let out_dim = required(p.out_dim, i, "out_dim")?;
                if entry.weight_len != in_dim * out_dim || entry.bias_len != out_dim {
                    return Err(Error::ShapeMismatch(format!(
                        "layer {i}: dense implies {} weights and {out_dim} biases, \
                         manifest declares {} and {}",
                        in_dim * out_dim,
                        entry.weight_len,
                        entry.bias_len
                    )));
                }
                Layer::Dense(Dense::new(
                    in_dim,
                    out_dim,
                    slice(i, entry.weight_offset, entry.weight_len)?,
                    slice(i, entry.bias_offset, entry.bias_len)?,
                )?)
            }
            LayerKind::Maxpool2d => {
                let window = required(p.window, i, "window")?;
                Layer::MaxPool2d(MaxPool2d::new(window, p.stride.unwrap_or(window))?)
            }
            LayerKind::Relu => Layer::Relu,
            LayerKind::Flatten => Layer::Flatten,
        };
        if matches!(
            entry.kind,
            LayerKind::Relu | LayerKind::Flatten | LayerKind::Maxpool2d
        ) && (entry.weight_len != 0 || entry.bias_len != 0)
        {
            return Err(Error::ShapeMismatch(format!(
                "layer {i}: {:?} takes no weights",
                entry.kind
            )));
        }
        shape = layer
            .output_shape(&shape)
            .map_err(|e| Error::ShapeMismatch(format!("layer {i}: {e}")))?;
        layers.push(layer);
    }
    Network::new(layers, manifest.input_shape, manifest.class_names.clone())
}

/// Serialises a network into a manifest and blob, packing each layer's
/// weights then biases in layer order.
pub fn network_to_parts<T: Scalar>(net: &Network<T>) -> (ModelManifest, Vec<u8>) {
    let mut reals: Vec<T> = Vec::new();
    let mut entries = Vec::with_capacity(net.layers().len());
    let mut push = |values: &[T]| -> (usize, usize) {
        let offset = reals.len();
        reals.extend_from_slice(values);
        (offset, values.len())
    };
    for layer in net.layers() {
        let mut entry = LayerEntry {
            kind: layer.kind(),
            params: LayerParams::default(),
            weight_offset: 0,
            weight_len: 0,
            bias_offset: 0,
            bias_len: 0,
        };
        match layer {
            Layer::Conv2d(c) => {
                entry.params = LayerParams {
                    in_channels: Some(c.in_channels),
                    out_channels: Some(c.out_channels),
                    kernel: Some([c.kernel.0, c.kernel.1]),
                    stride: Some(c.stride),
                    padding: Some(c.padding),
                    ..Default::default()
                };
                (entry.weight_offset, entry.weight_len) = push(&c.weight);
                (entry.bias_offset, entry.bias_len) = push(&c.bias);
            }
            Layer::Dense(d) => {
                entry.params = LayerParams {
                    in_dim: Some(d.in_dim),
                    out_dim: Some(d.out_dim),
                    ..Default::default()
                };
                (entry.weight_offset, entry.weight_len) = push(&d.weight);
                (entry.bias_offset, entry.bias_len) = push(&d.bias);
            }
            Layer::MaxPool2d(m) => {
                entry.params = LayerParams {
                    window: Some(m.window),
                    stride: Some(m.stride),
                    ..Default::default()
                };
            }
            Layer::Relu | Layer::Flatten => {}
        }
        entries.push(entry);
    }
    let manifest = ModelManifest {
        format_version: FORMAT_VERSION,
        input_shape: net.input_shape(),
        class_names: net.class_names().to_vec(),
        layers: entries,
    };
    (manifest, encode_f32_le(&reals))
}

pub fn save_network<T: Scalar>(
    net: &Network<T>,
    manifest_path: &Path,
    blob_path: &Path,
) -> Result<()> {
    let (manifest, blob) = network_to_parts(net);
    let json =
        serde_json::to_vec_pretty(&manifest).map_err(|e| Error::ManifestParse(e.to_string()))?;
    fs::write(manifest_path, json).map_err(|e| Error::io(manifest_path, e))?;
    fs::write(blob_path, blob).map_err(|e| Error::io(blob_path, e))?;
    Ok(())
}
