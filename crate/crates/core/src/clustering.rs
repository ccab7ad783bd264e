//! K-means++ clustering in attribution-feature space.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attribution::AttributionMap;
use crate::error::{Error, Result};
use crate::scalar::{decode_f32_le, encode_f32_le, Scalar};

/// How attribution maps become feature vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbeddingConfig {
    /// Side of the mean-pooling grid.
    pub grid: usize,
    pub l2_normalize: bool,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        Self {
            grid: 14,
            l2_normalize: true,
        }
    }
}

impl EmbeddingConfig {
    pub fn describe(&self) -> String {
        format!(
            "per-class mean-pool {0}x{0}{1}",
            self.grid,
            if self.l2_normalize { ", l2" } else { "" }
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector<T> {
    pub image_id: String,
    pub values: Vec<T>,
    pub provenance: String,
}

/// Adaptive mean pooling of an `[h, w]` plane to `[grid, grid]`. Cell `i`
/// spans rows `floor(i*h/grid) .. ceil((i+1)*h/grid)`.
pub fn mean_pool(plane: &[f64], h: usize, w: usize, grid: usize) -> Vec<f64> {
    let span = |i: usize, n: usize| (i * n / grid, ((i + 1) * n).div_ceil(grid));
    let mut out = Vec::with_capacity(grid * grid);
    for gy in 0..grid {
        let (y0, y1) = span(gy, h);
        for gx in 0..grid {
            let (x0, x1) = span(gx, w);
            let mut acc = 0.0;
            for y in y0..y1 {
                for x in x0..x1 {
                    acc += plane[y * w + x];
                }
            }
            out.push(acc / ((y1 - y0) * (x1 - x0)) as f64);
        }
    }
    out
}

/// Embeds each image's class maps: channel-summed pixel scores are
/// mean-pooled to `grid x grid` per class and concatenated in class order,
/// giving `d = classes * grid * grid`.
pub fn embed<T: Scalar>(
    maps: &[Vec<AttributionMap<T>>],
    config: &EmbeddingConfig,
) -> Result<Vec<FeatureVector<T>>> {
    if config.grid == 0 {
        return Err(Error::Domain("embedding grid must be positive".into()));
    }
    let Some(first) = maps.first() else {
        return Ok(Vec::new());
    };
    let classes = first.len();
    let shape = first
        .first()
        .map(|m| m.contributions.shape().to_vec())
        .ok_or_else(|| Error::InconsistentShapes("image without class maps".into()))?;
    for per_image in maps {
        if per_image.len() != classes {
            return Err(Error::InconsistentShapes(format!(
                "expected {classes} class maps per image, got {}",
                per_image.len()
            )));
        }
        if let Some(m) = per_image.iter().find(|m| m.contributions.shape() != shape) {
            return Err(Error::InconsistentShapes(format!(
                "map for {} has shape {:?}, expected {shape:?}",
                m.image_id,
                m.contributions.shape()
            )));
        }
    }
    let provenance = config.describe();
    maps.par_iter()
        .map(|per_image| {
            let mut values = Vec::with_capacity(classes * config.grid * config.grid);
            for map in per_image {
                let plane = map.pixel_scores()?;
                let (h, w) = (plane.shape()[0], plane.shape()[1]);
                values.extend(mean_pool(plane.data(), h, w, config.grid));
            }
            if config.l2_normalize {
                let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm > 0.0 {
                    values.iter_mut().for_each(|v| *v /= norm);
                }
            }
            Ok(FeatureVector {
                image_id: per_image[0].image_id.clone(),
                values: values.into_iter().map(T::from_f64_lossy).collect(),
                provenance: provenance.clone(),
            })
        })
        .collect()
}

fn sq_dist<T: Scalar>(a: &[T], b: &[T]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x.widen() - y.widen();
            d * d
        })
        .sum()
}

/// Nearest centroid index (ties to the lowest index) and squared distance.
pub fn nearest<T: Scalar>(centroids: &[Vec<T>], point: &[T]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = sq_dist(c, point);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn distinct_count<T: Scalar>(points: &[FeatureVector<T>]) -> usize {
    points
        .iter()
        .map(|p| {
            p.values
                .iter()
                .map(|v| v.widen().to_bits())
                .collect::<Vec<_>>()
        })
        .collect::<HashSet<_>>()
        .len()
}

fn check_points<T: Scalar>(points: &[FeatureVector<T>], k: usize) -> Result<usize> {
    let Some(first) = points.first() else {
        return Err(Error::EmptyInput("no points to cluster".into()));
    };
    let d = first.values.len();
    if let Some(p) = points.iter().find(|p| p.values.len() != d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            actual: p.values.len(),
        });
    }
    if k == 0 {
        return Err(Error::Domain("k must be at least 1".into()));
    }
    let available = distinct_count(points);
    if k > available {
        return Err(Error::KTooLarge { k, available });
    }
    Ok(d)
}

/// K-means++ seeding: the first centroid is uniform, each further one is
/// drawn with probability proportional to its squared distance to the
/// nearest centroid chosen so far.
pub fn seed_kmeanspp<T: Scalar>(
    points: &[FeatureVector<T>],
    k: usize,
    seed: u64,
) -> Result<Vec<Vec<T>>> {
    check_points(points, k)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let first = rng.gen_range(0..points.len());
    let mut centroids = vec![points[first].values.clone()];
    let mut d2: Vec<f64> = points
        .iter()
        .map(|p| sq_dist(&p.values, &centroids[0]))
        .collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let r = rng.gen::<f64>() * total;
        let mut acc = 0.0;
        // Last point with positive weight, used if rounding leaves r >= acc.
        let mut pick = d2
            .iter()
            .rposition(|&w| w > 0.0)
            .expect("k <= distinct points");
        for (i, &w) in d2.iter().enumerate() {
            acc += w;
            if w > 0.0 && r < acc {
                pick = i;
                break;
            }
        }
        let c = points[pick].values.clone();
        for (di, p) in d2.iter_mut().zip(points) {
            *di = di.min(sq_dist(&p.values, &c));
        }
        centroids.push(c);
    }
    Ok(centroids)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    pub max_iter: usize,
    /// Stop once no centroid moves more than this (Euclidean).
    pub tol: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iter: 300,
            tol: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel<T> {
    pub k: usize,
    pub centroids: Vec<Vec<T>>,
    /// `(image_id, cluster)` in input order.
    pub assignments: Vec<(String, usize)>,
    pub inertia: f64,
    pub iterations: usize,
    pub seed: u64,
    /// Inertia after every assignment step, in order.
    pub inertia_history: Vec<f64>,
}

impl<T: Scalar> ClusterModel<T> {
    pub fn dim(&self) -> usize {
        self.centroids.first().map_or(0, Vec::len)
    }

    pub fn labels(&self) -> Vec<usize> {
        self.assignments.iter().map(|(_, c)| *c).collect()
    }

    /// Nearest centroid for a new point; ties go to the lowest index.
    pub fn assign(&self, point: &FeatureVector<T>) -> Result<usize> {
        if point.values.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: point.values.len(),
            });
        }
        Ok(nearest(&self.centroids, &point.values).0)
    }

    pub fn members(&self, cluster: usize) -> Vec<&str> {
        self.assignments
            .iter()
            .filter(|(_, c)| *c == cluster)
            .map(|(id, _)| id.as_str())
            .collect()
    }
}

fn assign_all<T: Scalar>(points: &[FeatureVector<T>], centroids: &[Vec<T>]) -> Vec<(usize, f64)> {
    points
        .par_iter()
        .map(|p| nearest(centroids, &p.values))
        .collect()
}

/// Moves each empty cluster's centroid onto the point farthest from its
/// current centroid (taken from clusters with more than one member).
fn repair_empty<T: Scalar>(
    points: &[FeatureVector<T>],
    centroids: &mut [Vec<T>],
    assigned: &mut [(usize, f64)],
) {
    let k = centroids.len();
    loop {
        let mut sizes = vec![0usize; k];
        for (c, _) in assigned.iter() {
            sizes[*c] += 1;
        }
        let Some(empty) = sizes.iter().position(|&s| s == 0) else {
            return;
        };
        let far = assigned
            .iter()
            .enumerate()
            .filter(|(_, (c, _))| sizes[*c] > 1)
            .fold(None, |best: Option<(usize, f64)>, (i, (_, d))| match best {
                Some((_, bd)) if bd >= *d => best,
                _ => Some((i, *d)),
            });
        let Some((i, _)) = far else { return };
        centroids[empty] = points[i].values.clone();
        assigned[i] = (empty, 0.0);
    }
}

fn means<T: Scalar>(
    points: &[FeatureVector<T>],
    assigned: &[(usize, f64)],
    old: &[Vec<T>],
) -> Vec<Vec<T>> {
    let d = old[0].len();
    let mut sums = vec![vec![0.0f64; d]; old.len()];
    let mut counts = vec![0usize; old.len()];
    for (p, (c, _)) in points.iter().zip(assigned) {
        counts[*c] += 1;
        for (s, v) in sums[*c].iter_mut().zip(&p.values) {
            *s += v.widen();
        }
    }
    sums.into_iter()
        .zip(counts)
        .zip(old)
        .map(|((s, n), o)| {
            if n == 0 {
                o.clone()
            } else {
                s.into_iter()
                    .map(|v| T::from_f64_lossy(v / n as f64))
                    .collect()
            }
        })
        .collect()
}

/// Lloyd iterations from a k-means++ seeding.
pub fn fit<T: Scalar>(
    points: &[FeatureVector<T>],
    k: usize,
    seed: u64,
    options: &FitOptions,
) -> Result<ClusterModel<T>> {
    let mut centroids = seed_kmeanspp(points, k, seed)?;
    let mut history = Vec::new();
    let mut iterations = 0;
    let mut assigned;
    loop {
        assigned = assign_all(points, &centroids);
        repair_empty(points, &mut centroids, &mut assigned);
        history.push(assigned.iter().map(|(_, d)| d).sum::<f64>());
        if iterations == options.max_iter {
            break;
        }
        iterations += 1;
        let next = means(points, &assigned, &centroids);
        let shift = next
            .iter()
            .zip(&centroids)
            .map(|(a, b)| sq_dist(a, b).sqrt())
            .fold(0.0, f64::max);
        centroids = next;
        if shift < options.tol {
            assigned = assign_all(points, &centroids);
            repair_empty(points, &mut centroids, &mut assigned);
            history.push(assigned.iter().map(|(_, d)| d).sum::<f64>());
            break;
        }
    }
    let inertia = *history.last().expect("at least one assignment step");
    Ok(ClusterModel {
        k,
        assignments: points
            .iter()
            .zip(&assigned)
            .map(|(p, (c, _))| (p.image_id.clone(), *c))
            .collect(),
        centroids,
        inertia,
        iterations,
        seed,
        inertia_history: history,
    })
}

/// Runs [`fit`] with seeds `seed, seed + 1, ...` (`n_init` of them) and keeps
/// the lowest inertia; the earliest seed wins ties.
pub fn fit_best_of<T: Scalar>(
    points: &[FeatureVector<T>],
    k: usize,
    seed: u64,
    n_init: usize,
    options: &FitOptions,
) -> Result<ClusterModel<T>> {
    let runs = (0..n_init.max(1) as u64)
        .into_par_iter()
        .map(|i| fit(points, k, seed.wrapping_add(i), options))
        .collect::<Result<Vec<_>>>()?;
    Ok(runs
        .into_iter()
        .reduce(|best, m| if m.inertia < best.inertia { m } else { best })
        .expect("n_init >= 1"))
}

/// On-disk cluster export; centroids live in a separate raw blob.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterExport {
    pub k: usize,
    pub seed: u64,
    pub inertia: f64,
    pub iterations: usize,
    pub dim: usize,
    pub centroid_blob_ref: String,
    pub assignments: std::collections::BTreeMap<String, usize>,
    /// Input order of the assignments, so the model can be rebuilt exactly.
    pub order: Vec<String>,
    pub inertia_history: Vec<f64>,
}

/// Writes `clusters.json` and the centroid blob into `dir`.
pub fn write_clusters<T: Scalar>(
    dir: &Path,
    model: &ClusterModel<T>,
    blob_name: &str,
) -> Result<()> {
    let export = ClusterExport {
        k: model.k,
        seed: model.seed,
        inertia: model.inertia,
        iterations: model.iterations,
        dim: model.dim(),
        centroid_blob_ref: blob_name.to_string(),
        assignments: model.assignments.iter().cloned().collect(),
        order: model.assignments.iter().map(|(id, _)| id.clone()).collect(),
        inertia_history: model.inertia_history.clone(),
    };
    let json_path = dir.join("clusters.json");
    let json =
        serde_json::to_vec_pretty(&export).map_err(|e| Error::ManifestParse(e.to_string()))?;
    fs::write(&json_path, json).map_err(|e| Error::io(&json_path, e))?;
    let flat: Vec<T> = model.centroids.iter().flatten().copied().collect();
    let blob_path = dir.join(blob_name);
    fs::write(&blob_path, encode_f32_le(&flat)).map_err(|e| Error::io(&blob_path, e))?;
    Ok(())
}

pub fn read_clusters<T: Scalar>(dir: &Path) -> Result<ClusterModel<T>> {
    let json_path = dir.join("clusters.json");
    let bytes = fs::read(&json_path).map_err(|e| Error::io(&json_path, e))?;
    let export: ClusterExport =
        serde_json::from_slice(&bytes).map_err(|e| Error::ManifestParse(e.to_string()))?;
    let blob_path = dir.join(&export.centroid_blob_ref);
    let blob = fs::read(&blob_path).map_err(|e| Error::io(&blob_path, e))?;
    if blob.len() != export.k * export.dim * 4 {
        return Err(Error::BlobSizeMismatch {
            expected: export.k * export.dim * 4,
            actual: blob.len(),
        });
    }
    let flat: Vec<T> = decode_f32_le(&blob);
    let centroids = if export.dim == 0 {
        vec![Vec::new(); export.k]
    } else {
        flat.chunks(export.dim).map(<[T]>::to_vec).collect()
    };
    let assignments = export
        .order
        .iter()
        .map(|id| {
            export
                .assignments
                .get(id)
                .map(|c| (id.clone(), *c))
                .ok_or_else(|| Error::ManifestParse(format!("no assignment for {id}")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ClusterModel {
        k: export.k,
        centroids,
        assignments,
        inertia: export.inertia,
        iterations: export.iterations,
        seed: export.seed,
        inertia_history: export.inertia_history,
    })
}

/// Feature vectors as a raw `n x d` blob plus the id list and dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureIndex {
    pub dim: usize,
    pub image_ids: Vec<String>,
    pub provenance: String,
}

pub fn write_features<T: Scalar>(dir: &Path, points: &[FeatureVector<T>]) -> Result<()> {
    let index = FeatureIndex {
        dim: points.first().map_or(0, |p| p.values.len()),
        image_ids: points.iter().map(|p| p.image_id.clone()).collect(),
        provenance: points
            .first()
            .map(|p| p.provenance.clone())
            .unwrap_or_default(),
    };
    let json_path = dir.join("features.json");
    let json =
        serde_json::to_vec_pretty(&index).map_err(|e| Error::ManifestParse(e.to_string()))?;
    fs::write(&json_path, json).map_err(|e| Error::io(&json_path, e))?;
    let flat: Vec<T> = points
        .iter()
        .flat_map(|p| p.values.iter().copied())
        .collect();
    let blob_path = dir.join("features.bin");
    fs::write(&blob_path, encode_f32_le(&flat)).map_err(|e| Error::io(&blob_path, e))?;
    Ok(())
}

pub fn read_features<T: Scalar>(dir: &Path) -> Result<Vec<FeatureVector<T>>> {
    let json_path = dir.join("features.json");
    let bytes = fs::read(&json_path).map_err(|e| Error::io(&json_path, e))?;
    let index: FeatureIndex =
        serde_json::from_slice(&bytes).map_err(|e| Error::ManifestParse(e.to_string()))?;
    let blob_path = dir.join("features.bin");
    let blob = fs::read(&blob_path).map_err(|e| Error::io(&blob_path, e))?;
    let expected = index.dim * index.image_ids.len() * 4;
    if blob.len() != expected {
        return Err(Error::BlobSizeMismatch {
            expected,
            actual: blob.len(),
        });
    }
    let flat: Vec<T> = decode_f32_le(&blob);
    Ok(index
        .image_ids
        .into_iter()
        .enumerate()
        .map(|(i, image_id)| FeatureVector {
            image_id,
            values: flat[i * index.dim..(i + 1) * index.dim].to_vec(),
            provenance: index.provenance.clone(),
        })
        .collect())
}
