use std::fs;
use std::path::Path;

use chrono::Utc;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use vidi_core::attribution::{write_attribution, TracedInput};
use vidi_core::clustering::{
    embed, fit_best_of, read_clusters, read_features, write_clusters, write_features,
};
use vidi_core::datapipe::{
    display_base, load_image, load_manifest, preprocess, stratified_split, Dataset,
};
use vidi_core::metrics::{classification_report, k_sweep, ClusterQuality, SweepOptions};
use vidi_core::model_io::load_network;
use vidi_core::nn::Prediction;
use vidi_core::saliency::{
    gallery_page, overlay_ref, render_image_assets, ClusterContents, ClusterMember, OverlayView,
};
use vidi_core::{Baseline, ClusterModel, FeatureVector, Network};

use crate::config::{KRange, RunConfig};
use crate::error::{Result, ServiceError};
use crate::store::{read_json, write_json, AssetRefs, ErrorReport, RunRecord, RunStatus, RunStore};

pub const IMAGES_FILE: &str = "images.json";
pub const REPORT_FILE: &str = "report.json";
pub const CENTROIDS_FILE: &str = "centroids.bin";
pub const SWEEP_CSV: &str = "sweep.csv";
pub const SWEEP_JSON: &str = "sweep.json";

/// Per-image outcome of the attribution stage, stored in `images.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageEntry {
    pub image_id: String,
    pub label: String,
    pub severity_score: Option<f64>,
    pub predicted: String,
    pub probabilities: Vec<f64>,
    /// Largest `|sum(C) - delta_t|` over the image's class maps.
    pub summation_error: f64,
}

pub fn gallery_ref(cluster: usize) -> String {
    format!("galleries/cluster-{cluster}.json")
}

/// Validates `config` and records a pending run.
pub fn submit(store: &RunStore, config: RunConfig) -> Result<RunRecord> {
    config.validate()?;
    store.create(&store.new_run_id(), config, None)
}

/// Records a pending child run that re-clusters the stored features of
/// `parent_id` with a fixed `k`.
pub fn submit_recluster(
    store: &RunStore,
    parent_id: &str,
    k: usize,
    seed: u64,
) -> Result<RunRecord> {
    let parent = store.get_complete(parent_id)?;
    if k == 0 {
        return Err(ServiceError::InvalidConfig("k must be at least 1".into()));
    }
    if k > parent.num_images {
        return Err(vidi_core::Error::KTooLarge {
            k,
            available: parent.num_images,
        }
        .into());
    }
    let mut config = parent.config.clone();
    config.k = Some(k);
    config.k_range = None;
    config.seed = seed;
    store.create(&store.new_run_id(), config, Some(parent.run_id))
}

/// Runs a pending run to completion. Runs that already left `pending` are
/// returned unchanged, so repeated calls are harmless. Pipeline errors end
/// the run as `failed` with an error report; only store failures are
/// returned as `Err`.
pub fn execute(store: &RunStore, run_id: &str) -> Result<RunRecord> {
    let writer = store.writer(run_id);
    let _guard = writer.lock().expect("run writer poisoned");
    let mut record = store.get(run_id)?;
    if record.status != RunStatus::Pending {
        return Ok(record);
    }
    record.status = RunStatus::Running;
    record.started_at = Some(Utc::now());
    store.save(&record)?;
    tracing::info!(run_id, parent = ?record.parent, "run started");

    let dir = store.run_dir(run_id);
    let config = record.config.clone();
    let outcome = match record.parent.clone() {
        None => attribute_stage(&config, &dir, &mut record)
            .and_then(|points| cluster_stage(&dir, &mut record, &points)),
        Some(parent) => copy_parent(store, &parent, &dir, &mut record)
            .and_then(|_| read_features(&dir).map_err(ServiceError::from))
            .and_then(|points| cluster_stage(&dir, &mut record, &points)),
    };
    match outcome {
        Ok(()) => {
            record.status = RunStatus::Complete;
            tracing::info!(run_id, k = ?record.k, "run complete");
        }
        Err(e) => {
            tracing::warn!(run_id, error = %e, "run failed");
            let report = ErrorReport::from(&e);
            write_json(&dir.join("error.json"), &report)?;
            record.error = Some(report);
            record.status = RunStatus::Failed;
        }
    }
    record.completed_at = Some(Utc::now());
    store.save(&record)?;
    Ok(record)
}

/// Submits and executes in one call.
pub fn run_pipeline(store: &RunStore, config: RunConfig) -> Result<RunRecord> {
    let record = submit(store, config)?;
    execute(store, &record.run_id)
}

pub fn recluster(store: &RunStore, parent_id: &str, k: usize, seed: u64) -> Result<RunRecord> {
    let record = submit_recluster(store, parent_id, k, seed)?;
    execute(store, &record.run_id)
}

fn baselines(config: &RunConfig, net: &Network, dataset: &Dataset) -> Result<Vec<Baseline>> {
    let mut out = Vec::new();
    if config.baselines.include_zero {
        out.push(Baseline::zeros(net.input_shape()));
    }
    if let Some(bg) = config.baselines.background.as_ref().filter(|b| b.size > 0) {
        let source = match &bg.manifest {
            Some(path) => load_manifest(path)?,
            None => dataset.clone(),
        };
        let n = source.records.len();
        let sample = if bg.size >= n {
            source.records
        } else {
            stratified_split(&source, bg.size as f64 / n as f64, bg.seed)?.0
        };
        let refs = sample
            .par_iter()
            .map(|r| {
                let x = preprocess(&load_image(&r.path)?, &config.preprocess)?;
                Baseline::new(x)
            })
            .collect::<vidi_core::Result<Vec<_>>>()?;
        out.extend(refs);
    }
    Ok(out)
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| ServiceError::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| ServiceError::io(path, e))
}

/// Load, preprocess, attribute every class, embed, render overlays.
fn attribute_stage(
    config: &RunConfig,
    dir: &Path,
    record: &mut RunRecord,
) -> Result<Vec<FeatureVector>> {
    let dataset = load_manifest(&config.manifest)?;
    if let Some(s) = config.scenario.filter(|s| *s != dataset.scenario) {
        return Err(ServiceError::InvalidConfig(format!(
            "config expects scenario {s:?}, manifest has {:?}",
            dataset.scenario
        )));
    }
    if dataset.records.is_empty() {
        return Err(vidi_core::Error::EmptyInput("dataset manifest has no records".into()).into());
    }
    let net: Network = load_network(&config.model.manifest, &config.model.weights)?;
    let classes = net.class_names().to_vec();
    if let Some(label) = dataset.classes().into_iter().find(|c| !classes.contains(c)) {
        return Err(vidi_core::Error::UnknownLabel(format!(
            "dataset class {label} is not a model class"
        ))
        .into());
    }
    let (h, w) = config.preprocess.size;
    if net.input_shape() != [3, h, w] {
        return Err(ServiceError::InvalidConfig(format!(
            "model expects input {:?}, preprocessing produces [3, {h}, {w}]",
            net.input_shape()
        )));
    }
    let refs = baselines(config, &net, &dataset)?;
    record.scenario = Some(dataset.scenario);
    record.class_names = classes.clone();
    record.num_images = dataset.records.len();

    let attr_dir = dir.join("attr");
    let results = dataset
        .records
        .par_iter()
        .map(|r| -> Result<(ImageEntry, FeatureVector)> {
            let img = load_image(&r.path)?;
            let x = preprocess(&img, &config.preprocess)?;
            let traced = TracedInput::new(&net, &x, &refs)?;
            let prediction = Prediction::from_logits(traced.logits().data());
            let maps = (0..classes.len())
                .map(|c| traced.attribute(c).map(|m| m.with_image_id(&r.image_id)))
                .collect::<vidi_core::Result<Vec<_>>>()?;
            drop(traced);
            let summation_error = maps.iter().map(|m| m.summation_error()).fold(0.0, f64::max);
            if config.store_attributions {
                for (m, name) in maps.iter().zip(&classes) {
                    write_attribution(&attr_dir, m, name)?;
                }
            }
            let base = display_base::<f32>(&img, config.preprocess.size)?;
            for asset in render_image_assets(&r.image_id, &base, &maps, &classes, &config.overlay)?
            {
                write_bytes(&dir.join(&asset.reference), &asset.png)?;
            }
            let feature = embed(std::slice::from_ref(&maps), &config.embedding)?.remove(0);
            let entry = ImageEntry {
                image_id: r.image_id.clone(),
                label: r.label.clone(),
                severity_score: r.severity_score,
                predicted: classes[prediction.class_index].clone(),
                probabilities: prediction.probabilities,
                summation_error,
            };
            Ok((entry, feature))
        })
        .collect::<Result<Vec<_>>>()?;
    let (images, points): (Vec<_>, Vec<_>) = results.into_iter().unzip();

    write_json(&dir.join(IMAGES_FILE), &images)?;
    write_features(dir, &points)?;
    let truth: Vec<&str> = images.iter().map(|i| i.label.as_str()).collect();
    let predicted: Vec<&str> = images.iter().map(|i| i.predicted.as_str()).collect();
    let report = classification_report(&truth, &predicted, &classes)?;
    write_json(&dir.join(REPORT_FILE), &report)?;
    record.assets.images = Some(IMAGES_FILE.into());
    record.assets.features = Some("features.json".into());
    record.assets.report = Some(REPORT_FILE.into());
    record.assets.overlays = Some("overlays".into());
    if config.store_attributions {
        record.assets.attributions = Some("attr".into());
    }
    Ok(points)
}

fn copy_dir(from: &Path, to: &Path) -> Result<()> {
    fs::create_dir_all(to).map_err(|e| ServiceError::io(to, e))?;
    for entry in fs::read_dir(from).map_err(|e| ServiceError::io(from, e))? {
        let entry = entry.map_err(|e| ServiceError::io(from, e))?;
        let target = to.join(entry.file_name());
        fs::copy(entry.path(), &target).map_err(|e| ServiceError::io(&target, e))?;
    }
    Ok(())
}

/// Copies what a child run needs from its parent so it stays self-contained.
/// Attribution blobs are not copied; features already summarize them.
fn copy_parent(
    store: &RunStore,
    parent_id: &str,
    dir: &Path,
    record: &mut RunRecord,
) -> Result<()> {
    let parent = store.get_complete(parent_id)?;
    let from = store.run_dir(parent_id);
    for file in [IMAGES_FILE, REPORT_FILE, "features.json", "features.bin"] {
        let target = dir.join(file);
        fs::copy(from.join(file), &target).map_err(|e| ServiceError::io(&target, e))?;
    }
    copy_dir(&from.join("overlays"), &dir.join("overlays"))?;
    record.scenario = parent.scenario;
    record.class_names = parent.class_names;
    record.num_images = parent.num_images;
    record.assets = AssetRefs {
        images: Some(IMAGES_FILE.into()),
        features: Some("features.json".into()),
        report: Some(REPORT_FILE.into()),
        overlays: Some("overlays".into()),
        ..AssetRefs::default()
    };
    Ok(())
}

/// Sweep (when configured), final fit, quality and gallery manifests.
fn cluster_stage(dir: &Path, record: &mut RunRecord, points: &[FeatureVector]) -> Result<()> {
    let config = record.config.clone();
    let images: Vec<ImageEntry> = read_json(&dir.join(IMAGES_FILE))?;
    let labels: Vec<&str> = images.iter().map(|i| i.label.as_str()).collect();
    let k = match (config.k, config.k_range) {
        (Some(k), _) => k,
        (None, Some(KRange { min, max })) => {
            let options = SweepOptions {
                n_init: config.n_init,
                fit: config.fit,
                policy: config.policy,
            };
            let sweep = k_sweep(points, &labels, min, max, config.seed, &options)?;
            fs::write(dir.join(SWEEP_CSV), sweep.to_csv()?)
                .map_err(|e| ServiceError::io(&dir.join(SWEEP_CSV), e))?;
            write_json(&dir.join(SWEEP_JSON), &sweep)?;
            record.assets.sweep_csv = Some(SWEEP_CSV.into());
            record.assets.sweep_json = Some(SWEEP_JSON.into());
            let chosen = sweep.chosen_k;
            record.sweep = Some(sweep);
            chosen
        }
        (None, None) => {
            return Err(ServiceError::InvalidConfig(
                "one of k or k_range is required".into(),
            ))
        }
    };
    let model = fit_best_of(points, k, config.seed, config.n_init, &config.fit)?;
    write_clusters(dir, &model, CENTROIDS_FILE)?;
    record.assets.clusters = Some("clusters.json".into());
    record.assets.centroids = Some(CENTROIDS_FILE.into());
    record.quality = Some(ClusterQuality::score(&labels, &model.labels())?);
    record.k = Some(k);

    fs::create_dir_all(dir.join("galleries"))
        .map_err(|e| ServiceError::io(&dir.join("galleries"), e))?;
    record.assets.galleries.clear();
    for contents in cluster_contents(&model, &images) {
        let page = gallery_page(&contents, &record.class_names, &config.overlay, |id| {
            record.class_names.iter().all(|c| {
                [OverlayView::Favorable, OverlayView::Glum]
                    .iter()
                    .all(|v| dir.join(overlay_ref(id, c, *v)).is_file())
            })
        })?;
        let reference = gallery_ref(contents.cluster_id);
        write_json(&dir.join(&reference), &page)?;
        record.assets.galleries.push(reference);
    }
    Ok(())
}

/// Members of every cluster with their labels, in input order.
pub fn cluster_contents(model: &ClusterModel, images: &[ImageEntry]) -> Vec<ClusterContents> {
    let mut out: Vec<ClusterContents> = (0..model.k)
        .map(|cluster_id| ClusterContents {
            cluster_id,
            members: Vec::new(),
        })
        .collect();
    for ((id, c), img) in model.assignments.iter().zip(images) {
        debug_assert_eq!(id, &img.image_id);
        out[*c].members.push(ClusterMember {
            image_id: id.clone(),
            label: Some(img.label.clone()),
            predicted: Some(img.predicted.clone()),
            severity: img.severity_score.map(|s| format!("{s}")),
        });
    }
    out
}

/// Stored images and cluster model of a complete run.
pub fn load_clustering(
    store: &RunStore,
    run_id: &str,
) -> Result<(RunRecord, Vec<ImageEntry>, ClusterModel)> {
    let record = store.get_complete(run_id)?;
    let dir = store.run_dir(run_id);
    let images = read_json(&dir.join(IMAGES_FILE))?;
    let model = read_clusters(&dir)?;
    Ok((record, images, model))
}
