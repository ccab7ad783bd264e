//! Red/blue saliency overlays and per-cluster galleries.
//!
//! Per-pixel scores (contributions summed over channels) are divided by a
//! symmetric scale: the `percentile_clip` percentile of `|score|` over the
//! image, or the maximum `|score|` when that percentile is zero. The clamped
//! value `v ∈ [-1, 1]` gives an opacity `a = |v| * alpha`; each channel is
//! blended as `round(gray * (1 - a) + color * a)` with red for `v > 0` and
//! blue for `v < 0`. Pixels with a zero score keep the base gray value.

use std::collections::{BTreeMap, HashMap};
use std::io::Cursor;

use image::{ImageFormat, Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::attribution::AttributionMap;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const RED: [u8; 3] = [255, 0, 0];
pub const BLUE: [u8; 3] = [0, 0, 255];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OverlayStyle {
    pub alpha: f64,
    pub percentile_clip: f64,
}

impl Default for OverlayStyle {
    fn default() -> Self {
        Self {
            alpha: 0.6,
            percentile_clip: 99.0,
        }
    }
}

impl OverlayStyle {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Domain(format!(
                "alpha {} outside [0, 1]",
                self.alpha
            )));
        }
        if !(self.percentile_clip > 50.0 && self.percentile_clip <= 100.0) {
            return Err(Error::Domain(format!(
                "percentile_clip {} outside (50, 100]",
                self.percentile_clip
            )));
        }
        Ok(())
    }
}

/// Which signed part of the map is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OverlayView {
    Signed,
    Favorable,
    Glum,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Overlay {
    pub png: Vec<u8>,
    /// Set when the map is identically zero and the base image was returned
    /// unchanged.
    pub degenerate: bool,
}

/// Linear-interpolated percentile of `|values|`, falling back to the maximum
/// when the percentile is zero. Returns 0 only for an all-zero input.
pub fn symmetric_scale(values: &[f64], percentile: f64) -> f64 {
    let mut mags: Vec<f64> = values.iter().map(|v| v.abs()).collect();
    if mags.is_empty() {
        return 0.0;
    }
    mags.sort_by(f64::total_cmp);
    let rank = percentile / 100.0 * (mags.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    let q = mags[lo] + (mags[hi] - mags[lo]) * (rank - lo as f64);
    if q > 0.0 {
        q
    } else {
        *mags.last().expect("non-empty")
    }
}

fn gray_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Blends one pixel. `value` is the score divided by the scale.
pub fn blend_pixel(gray: u8, value: f64, alpha: f64) -> [u8; 3] {
    if value == 0.0 {
        return [gray; 3];
    }
    let v = value.clamp(-1.0, 1.0);
    let a = v.abs() * alpha;
    let color = if v > 0.0 { RED } else { BLUE };
    let g = gray as f64;
    color.map(|c| (g * (1.0 - a) + c as f64 * a).round() as u8)
}

fn base_plane<T: Scalar>(base: &Tensor<T>) -> Result<(usize, usize, &[T])> {
    match base.shape() {
        [h, w] | [1, h, w] => Ok((*h, *w, base.data())),
        other => Err(Error::ShapeMismatch(format!(
            "base image must be [h, w] or [1, h, w], got {other:?}"
        ))),
    }
}

/// Renders per-pixel `scores` (shape `[h, w]`) over a grayscale base with
/// values in `[0, 1]`, using a fixed `scale`.
pub fn render_scores<T: Scalar>(
    base: &Tensor<T>,
    scores: &Tensor<f64>,
    scale: f64,
    alpha: f64,
    view: OverlayView,
) -> Result<RgbImage> {
    let (h, w, gray) = base_plane(base)?;
    if scores.shape() != [h, w] {
        return Err(Error::ShapeMismatch(format!(
            "base is {h}x{w}, map is {:?}",
            scores.shape()
        )));
    }
    let mut img = RgbImage::new(w as u32, h as u32);
    for (i, (g, s)) in gray.iter().zip(scores.data()).enumerate() {
        let s = match view {
            OverlayView::Signed => *s,
            OverlayView::Favorable => s.max(0.0),
            OverlayView::Glum => s.min(0.0),
        };
        let value = if scale > 0.0 { s / scale } else { 0.0 };
        let px = blend_pixel(gray_u8(g.widen()), value, alpha);
        img.put_pixel((i % w) as u32, (i / w) as u32, Rgb(px));
    }
    Ok(img)
}

pub fn encode_png(img: &RgbImage) -> Result<Vec<u8>> {
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png)
        .map_err(|e| Error::Encode(e.to_string()))?;
    Ok(buf.into_inner())
}

/// Grayscale base rendered as an RGB PNG without any overlay.
pub fn render_base<T: Scalar>(base: &Tensor<T>) -> Result<Vec<u8>> {
    let (h, w, _) = base_plane(base)?;
    let zeros = Tensor::zeros(&[h, w]);
    encode_png(&render_scores(base, &zeros, 0.0, 0.0, OverlayView::Signed)?)
}

pub fn render_overlay_view<T: Scalar>(
    base: &Tensor<T>,
    map: &AttributionMap<T>,
    style: &OverlayStyle,
    view: OverlayView,
) -> Result<Overlay> {
    style.validate()?;
    let scores = map.pixel_scores()?;
    let scale = symmetric_scale(scores.data(), style.percentile_clip);
    let img = render_scores(base, &scores, scale, style.alpha, view)?;
    Ok(Overlay {
        png: encode_png(&img)?,
        degenerate: scale == 0.0,
    })
}

/// Signed red/blue overlay of `map` on `base`.
pub fn render_overlay<T: Scalar>(
    base: &Tensor<T>,
    map: &AttributionMap<T>,
    style: &OverlayStyle,
) -> Result<Overlay> {
    render_overlay_view(base, map, style, OverlayView::Signed)
}

pub fn base_ref(image_id: &str) -> String {
    format!("overlays/{image_id}.base.png")
}

pub fn overlay_ref(image_id: &str, class_name: &str, view: OverlayView) -> String {
    let tag = match view {
        OverlayView::Signed => "signed",
        OverlayView::Favorable => "fav",
        OverlayView::Glum => "glum",
    };
    format!("overlays/{image_id}.{class_name}.{tag}.png")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterMember {
    pub image_id: String,
    pub label: Option<String>,
    pub predicted: Option<String>,
    pub severity: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterContents {
    pub cluster_id: usize,
    pub members: Vec<ClusterMember>,
}

impl ClusterContents {
    /// Most frequent label (ties to the lexicographically smallest) and the
    /// fraction of labelled members carrying it.
    pub fn purity(&self) -> Option<(String, f64)> {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for m in &self.members {
            if let Some(l) = &m.label {
                *counts.entry(l).or_default() += 1;
            }
        }
        let total: usize = counts.values().sum();
        let (label, n) = counts
            .into_iter()
            .fold(None, |best: Option<(&str, usize)>, (l, n)| match best {
                Some((_, bn)) if bn >= n => best,
                _ => Some((l, n)),
            })?;
        Some((label.to_string(), n as f64 / total as f64))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlayRefs {
    pub class_name: String,
    pub favorable: String,
    pub glum: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GalleryRow {
    pub image_id: String,
    pub base: String,
    pub label: Option<String>,
    pub predicted: Option<String>,
    pub severity: Option<String>,
    pub overlays: Vec<OverlayRefs>,
}

/// Gallery manifest for one cluster; rows sorted by image id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GalleryPage {
    pub cluster_id: usize,
    pub size: usize,
    pub majority_label: Option<String>,
    pub purity: Option<f64>,
    pub rows: Vec<GalleryRow>,
    pub style: OverlayStyle,
}

/// Builds the gallery manifest. `has_maps(image_id)` reports whether every
/// class map for the image is available.
pub fn gallery_page(
    cluster: &ClusterContents,
    class_names: &[String],
    style: &OverlayStyle,
    has_maps: impl Fn(&str) -> bool,
) -> Result<GalleryPage> {
    let mut members: Vec<&ClusterMember> = cluster.members.iter().collect();
    members.sort_by(|a, b| a.image_id.cmp(&b.image_id));
    let mut rows = Vec::with_capacity(members.len());
    for m in members {
        if !has_maps(&m.image_id) {
            return Err(Error::MissingAttribution {
                image_id: m.image_id.clone(),
                class: class_names.join(","),
            });
        }
        rows.push(GalleryRow {
            image_id: m.image_id.clone(),
            base: base_ref(&m.image_id),
            label: m.label.clone(),
            predicted: m.predicted.clone(),
            severity: m.severity.clone(),
            overlays: class_names
                .iter()
                .map(|c| OverlayRefs {
                    class_name: c.clone(),
                    favorable: overlay_ref(&m.image_id, c, OverlayView::Favorable),
                    glum: overlay_ref(&m.image_id, c, OverlayView::Glum),
                })
                .collect(),
        });
    }
    let purity = cluster.purity();
    Ok(GalleryPage {
        cluster_id: cluster.cluster_id,
        size: cluster.members.len(),
        majority_label: purity.as_ref().map(|p| p.0.clone()),
        purity: purity.map(|p| p.1),
        rows,
        style: *style,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedAsset {
    pub reference: String,
    pub png: Vec<u8>,
    pub degenerate: bool,
}

/// Base image plus favorable and glum overlays for every class map of one
/// image. `maps` must be indexed by class.
pub fn render_image_assets<T: Scalar>(
    image_id: &str,
    base: &Tensor<T>,
    maps: &[AttributionMap<T>],
    class_names: &[String],
    style: &OverlayStyle,
) -> Result<Vec<RenderedAsset>> {
    if maps.len() != class_names.len() {
        let have: Vec<usize> = maps.iter().map(|m| m.target_class).collect();
        let missing = (0..class_names.len())
            .find(|c| !have.contains(c))
            .unwrap_or(0);
        return Err(Error::MissingAttribution {
            image_id: image_id.to_string(),
            class: class_names[missing].clone(),
        });
    }
    let mut assets = vec![RenderedAsset {
        reference: base_ref(image_id),
        png: render_base(base)?,
        degenerate: false,
    }];
    for (class, map) in class_names.iter().zip(maps) {
        for view in [OverlayView::Favorable, OverlayView::Glum] {
            let overlay = render_overlay_view(base, map, style, view)?;
            assets.push(RenderedAsset {
                reference: overlay_ref(image_id, class, view),
                png: overlay.png,
                degenerate: overlay.degenerate,
            });
        }
    }
    Ok(assets)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedGallery {
    pub page: GalleryPage,
    pub assets: Vec<RenderedAsset>,
}

/// Renders a cluster gallery: the manifest plus every referenced PNG.
pub fn render_gallery<T: Scalar>(
    cluster: &ClusterContents,
    maps: &HashMap<String, Vec<AttributionMap<T>>>,
    bases: &HashMap<String, Tensor<T>>,
    class_names: &[String],
    style: &OverlayStyle,
) -> Result<RenderedGallery> {
    style.validate()?;
    let page = gallery_page(cluster, class_names, style, |id| {
        maps.get(id).is_some_and(|m| m.len() == class_names.len()) && bases.contains_key(id)
    })?;
    let mut assets = Vec::new();
    for row in &page.rows {
        assets.extend(render_image_assets(
            &row.image_id,
            &bases[&row.image_id],
            &maps[&row.image_id],
            class_names,
            style,
        )?);
    }
    Ok(RenderedGallery { page, assets })
}
