use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::Write;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Result, ServiceError};
use crate::pipeline::{cluster_contents, load_clustering};
use crate::store::RunStore;

pub const LOG_FILE: &str = "annotations.log";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Accept,
    Relabel,
    FlagImpure,
}

/// Body of an annotation submission.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRequest {
    pub verdict: Verdict,
    #[serde(default)]
    pub assigned_label: Option<String>,
    #[serde(default)]
    pub author: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub run_id: String,
    pub cluster_id: usize,
    pub verdict: Verdict,
    pub assigned_label: Option<String>,
    pub author: String,
    pub timestamp: DateTime<Utc>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelSource {
    /// Per-image model prediction, cluster not annotated.
    Model,
    /// Label set by an accept or relabel verdict.
    Expert,
    /// Cluster flagged impure; the model prediction is kept for review.
    Flagged,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExportRow {
    pub image_id: String,
    pub cluster: usize,
    pub label: String,
    pub source: LabelSource,
}

/// Appends a validated annotation to the run's log.
pub fn annotate(
    store: &RunStore,
    run_id: &str,
    cluster_id: usize,
    request: AnnotationRequest,
) -> Result<AnnotationRecord> {
    let record = store.get_complete(run_id)?;
    if record.k.is_none_or(|k| cluster_id >= k) {
        return Err(ServiceError::ClusterNotFound {
            run_id: run_id.to_string(),
            cluster: cluster_id,
        });
    }
    match (&request.verdict, &request.assigned_label) {
        (Verdict::Relabel, None) => {
            return Err(ServiceError::InvalidLabel(
                "relabel requires assigned_label".into(),
            ));
        }
        (_, Some(label)) if !record.class_names.contains(label) => {
            return Err(ServiceError::InvalidLabel(format!(
                "{label} is not one of {:?}",
                record.class_names
            )));
        }
        _ => {}
    }
    let entry = AnnotationRecord {
        run_id: run_id.to_string(),
        cluster_id,
        verdict: request.verdict,
        assigned_label: request.assigned_label,
        author: request.author,
        timestamp: Utc::now(),
    };
    let mut line = serde_json::to_string(&entry).expect("annotation serializes");
    line.push('\n');
    let path = store.run_dir(run_id).join(LOG_FILE);
    let writer = store.writer(run_id);
    let _guard = writer.lock().expect("run writer poisoned");
    let mut file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&path)
        .map_err(|e| ServiceError::io(&path, e))?;
    file.write_all(line.as_bytes())
        .map_err(|e| ServiceError::io(&path, e))?;
    Ok(entry)
}

/// Every annotation of a run, oldest first.
pub fn read_log(store: &RunStore, run_id: &str) -> Result<Vec<AnnotationRecord>> {
    store.get(run_id)?;
    let path = store.run_dir(run_id).join(LOG_FILE);
    if !path.is_file() {
        return Ok(Vec::new());
    }
    let text = fs::read_to_string(&path).map_err(|e| ServiceError::io(&path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            serde_json::from_str(l).map_err(|e| ServiceError::Json {
                path: path.clone(),
                message: e.to_string(),
            })
        })
        .collect()
}

/// Latest annotation per cluster.
pub fn latest(log: &[AnnotationRecord]) -> BTreeMap<usize, AnnotationRecord> {
    log.iter().map(|a| (a.cluster_id, a.clone())).collect()
}

/// Effective label of every image: cluster verdicts expanded to members,
/// unannotated clusters fall back to the model prediction. Rows follow the
/// dataset order.
pub fn export_rows(store: &RunStore, run_id: &str) -> Result<Vec<ExportRow>> {
    let (_, images, model) = load_clustering(store, run_id)?;
    let view = latest(&read_log(store, run_id)?);
    let contents = cluster_contents(&model, &images);
    // majority prediction per cluster, ties to the smallest label
    let majority: Vec<Option<String>> = contents
        .iter()
        .map(|c| {
            let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
            for m in &c.members {
                *counts
                    .entry(m.predicted.as_deref().unwrap_or_default())
                    .or_default() += 1;
            }
            counts
                .into_iter()
                .fold(None, |best: Option<(&str, usize)>, (l, n)| match best {
                    Some((_, bn)) if bn >= n => best,
                    _ => Some((l, n)),
                })
                .map(|(l, _)| l.to_string())
        })
        .collect();
    Ok(model
        .assignments
        .iter()
        .zip(&images)
        .map(|((id, cluster), img)| {
            let (label, source) = match view.get(cluster) {
                None => (img.predicted.clone(), LabelSource::Model),
                Some(a) => match a.verdict {
                    Verdict::Relabel => (
                        a.assigned_label.clone().expect("validated"),
                        LabelSource::Expert,
                    ),
                    Verdict::Accept => (
                        a.assigned_label
                            .clone()
                            .or_else(|| majority[*cluster].clone())
                            .unwrap_or_else(|| img.predicted.clone()),
                        LabelSource::Expert,
                    ),
                    Verdict::FlagImpure => (img.predicted.clone(), LabelSource::Flagged),
                },
            };
            ExportRow {
                image_id: id.clone(),
                cluster: *cluster,
                label,
                source,
            }
        })
        .collect())
}

/// CSV with header `image_id,cluster,label,source`.
pub fn export_csv(store: &RunStore, run_id: &str) -> Result<String> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    for row in export_rows(store, run_id)? {
        writer.serialize(row).expect("in-memory csv write");
    }
    let bytes = writer.into_inner().expect("in-memory csv flush");
    Ok(String::from_utf8(bytes).expect("csv is utf-8"))
}
