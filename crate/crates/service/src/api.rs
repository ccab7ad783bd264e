use std::path::{Component, Path};
use std::sync::Arc;

use axum::body::Body;
use axum::extract::{Path as UrlPath, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;
use vidi_core::metrics::{ClusterQuality, KSweepResult};
use vidi_core::saliency::{ClusterMember, GalleryPage};

use crate::annotations::{
    annotate, export_csv, latest, read_log, AnnotationRecord, AnnotationRequest,
};
use crate::config::RunConfig;
use crate::error::ServiceError;
use crate::pipeline::{self, cluster_contents, gallery_ref, load_clustering};
use crate::store::{read_json, valid_run_id, RunRecord, RunStore};

pub struct ApiError(ServiceError);

impl<E: Into<ServiceError>> From<E> for ApiError {
    fn from(e: E) -> Self {
        ApiError(e.into())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        use vidi_core::Error as E;
        let status = match &self.0 {
            ServiceError::RunNotFound(_)
            | ServiceError::ClusterNotFound { .. }
            | ServiceError::AssetNotFound(_) => StatusCode::NOT_FOUND,
            ServiceError::RunNotComplete { .. } => StatusCode::CONFLICT,
            ServiceError::InvalidConfig(_) | ServiceError::InvalidLabel(_) => {
                StatusCode::UNPROCESSABLE_ENTITY
            }
            ServiceError::Core(E::KTooLarge { .. } | E::Domain(_)) => {
                StatusCode::UNPROCESSABLE_ENTITY
            }
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        let body = json!({"error": self.0.kind(), "message": self.0.to_string()});
        (status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

#[derive(Clone)]
struct AppState {
    store: Arc<RunStore>,
}

pub fn router(store: Arc<RunStore>) -> Router {
    Router::new()
        .route("/api/runs", get(list_runs).post(create_run))
        .route("/api/runs/{id}", get(get_run))
        .route("/api/runs/{id}/sweep", get(get_sweep))
        .route("/api/runs/{id}/clusters", get(list_clusters))
        .route("/api/runs/{id}/clusters/{cid}", get(get_cluster))
        .route(
            "/api/runs/{id}/clusters/{cid}/annotations",
            get(cluster_annotations).post(post_annotation),
        )
        .route("/api/runs/{id}/recluster", post(post_recluster))
        .route("/api/runs/{id}/annotations", get(run_annotations))
        .route("/api/runs/{id}/annotations/export", get(export))
        .route("/api/assets/{*reference}", get(asset))
        .with_state(AppState { store })
}

/// Runs the pipeline for `run_id` on the blocking pool.
fn spawn_execute(store: Arc<RunStore>, run_id: String) {
    tokio::task::spawn_blocking(move || {
        if let Err(e) = pipeline::execute(&store, &run_id) {
            tracing::error!(run_id, error = %e, "run could not be executed");
        }
    });
}

/// Prefixes a run-relative reference so it can be fetched from `/api/assets/`.
fn asset_ref(run_id: &str, reference: &str) -> String {
    format!("{run_id}/{reference}")
}

async fn list_runs(State(s): State<AppState>) -> ApiResult<Json<Vec<RunRecord>>> {
    Ok(Json(s.store.list()?))
}

async fn create_run(
    State(s): State<AppState>,
    Json(config): Json<RunConfig>,
) -> ApiResult<(StatusCode, Json<RunRecord>)> {
    let record = pipeline::submit(&s.store, config)?;
    spawn_execute(s.store.clone(), record.run_id.clone());
    Ok((StatusCode::ACCEPTED, Json(record)))
}

async fn get_run(
    State(s): State<AppState>,
    UrlPath(id): UrlPath<String>,
) -> ApiResult<Json<RunRecord>> {
    Ok(Json(s.store.get(&id)?))
}

#[derive(Serialize, Deserialize)]
pub struct SweepPayload {
    #[serde(flatten)]
    pub sweep: KSweepResult,
    pub csv_ref: String,
}

async fn get_sweep(
    State(s): State<AppState>,
    UrlPath(id): UrlPath<String>,
) -> ApiResult<Json<SweepPayload>> {
    let record = s.store.get_complete(&id)?;
    let sweep = record
        .sweep
        .ok_or_else(|| ServiceError::AssetNotFound(format!("run {id} has no sweep")))?;
    Ok(Json(SweepPayload {
        sweep,
        csv_ref: asset_ref(&id, pipeline::SWEEP_CSV),
    }))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub cluster_id: usize,
    pub size: usize,
    pub majority_label: Option<String>,
    pub purity: Option<f64>,
    pub annotation: Option<AnnotationRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ClusterList {
    pub run_id: String,
    pub k: usize,
    pub quality: ClusterQuality,
    pub clusters: Vec<ClusterSummary>,
}

async fn list_clusters(
    State(s): State<AppState>,
    UrlPath(id): UrlPath<String>,
) -> ApiResult<Json<ClusterList>> {
    let (record, images, model) = load_clustering(&s.store, &id)?;
    let view = latest(&read_log(&s.store, &id)?);
    let clusters = cluster_contents(&model, &images)
        .into_iter()
        .map(|c| {
            let purity = c.purity();
            ClusterSummary {
                cluster_id: c.cluster_id,
                size: c.members.len(),
                majority_label: purity.as_ref().map(|p| p.0.clone()),
                purity: purity.map(|p| p.1),
                annotation: view.get(&c.cluster_id).cloned(),
            }
        })
        .collect();
    Ok(Json(ClusterList {
        run_id: id,
        k: model.k,
        quality: record.quality.expect("complete run has quality"),
        clusters,
    }))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ClusterDetail {
    pub run_id: String,
    pub cluster_id: usize,
    pub members: Vec<ClusterMember>,
    /// Quality of the run's whole clustering.
    pub quality: ClusterQuality,
    /// Gallery manifest with asset references usable under `/api/assets/`.
    pub gallery: GalleryPage,
    pub annotation: Option<AnnotationRecord>,
}

fn cluster_id(s: &AppState, id: &str, cid: usize) -> ApiResult<RunRecord> {
    let record = s.store.get_complete(id)?;
    if record.k.is_none_or(|k| cid >= k) {
        return Err(ServiceError::ClusterNotFound {
            run_id: id.to_string(),
            cluster: cid,
        }
        .into());
    }
    Ok(record)
}

async fn get_cluster(
    State(s): State<AppState>,
    UrlPath((id, cid)): UrlPath<(String, usize)>,
) -> ApiResult<Json<ClusterDetail>> {
    let record = cluster_id(&s, &id, cid)?;
    let (_, images, model) = load_clustering(&s.store, &id)?;
    let members = cluster_contents(&model, &images).swap_remove(cid).members;
    let mut gallery: GalleryPage = read_json(&s.store.run_dir(&id).join(gallery_ref(cid)))?;
    for row in &mut gallery.rows {
        row.base = asset_ref(&id, &row.base);
        for o in &mut row.overlays {
            o.favorable = asset_ref(&id, &o.favorable);
            o.glum = asset_ref(&id, &o.glum);
        }
    }
    let annotation = latest(&read_log(&s.store, &id)?).remove(&cid);
    Ok(Json(ClusterDetail {
        run_id: id,
        cluster_id: cid,
        members,
        quality: record.quality.expect("complete run has quality"),
        gallery,
        annotation,
    }))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ClusterAnnotations {
    pub latest: Option<AnnotationRecord>,
    pub history: Vec<AnnotationRecord>,
}

async fn cluster_annotations(
    State(s): State<AppState>,
    UrlPath((id, cid)): UrlPath<(String, usize)>,
) -> ApiResult<Json<ClusterAnnotations>> {
    cluster_id(&s, &id, cid)?;
    let history: Vec<_> = read_log(&s.store, &id)?
        .into_iter()
        .filter(|a| a.cluster_id == cid)
        .collect();
    Ok(Json(ClusterAnnotations {
        latest: history.last().cloned(),
        history,
    }))
}

async fn post_annotation(
    State(s): State<AppState>,
    UrlPath((id, cid)): UrlPath<(String, usize)>,
    Json(request): Json<AnnotationRequest>,
) -> ApiResult<(StatusCode, Json<AnnotationRecord>)> {
    let store = s.store.clone();
    let record = tokio::task::spawn_blocking(move || annotate(&store, &id, cid, request))
        .await
        .expect("annotation task panicked")?;
    Ok((StatusCode::CREATED, Json(record)))
}

async fn run_annotations(
    State(s): State<AppState>,
    UrlPath(id): UrlPath<String>,
) -> ApiResult<Json<Vec<AnnotationRecord>>> {
    Ok(Json(read_log(&s.store, &id)?))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ReclusterRequest {
    pub k: usize,
    #[serde(default)]
    pub seed: u64,
}

async fn post_recluster(
    State(s): State<AppState>,
    UrlPath(id): UrlPath<String>,
    Json(req): Json<ReclusterRequest>,
) -> ApiResult<(StatusCode, Json<RunRecord>)> {
    let record = pipeline::submit_recluster(&s.store, &id, req.k, req.seed)?;
    spawn_execute(s.store.clone(), record.run_id.clone());
    Ok((StatusCode::ACCEPTED, Json(record)))
}

async fn export(State(s): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult<Response> {
    let csv = export_csv(&s.store, &id)?;
    Ok(([(header::CONTENT_TYPE, "text/csv")], csv).into_response())
}

/// Resolves `<run_id>/<relative path>` to a file inside that run directory.
/// Only plain path components are accepted.
pub fn resolve_asset(
    store: &RunStore,
    reference: &str,
) -> Result<std::path::PathBuf, ServiceError> {
    let not_found = || ServiceError::AssetNotFound(reference.to_string());
    let rel = Path::new(reference);
    let mut parts = Vec::new();
    for c in rel.components() {
        match c {
            Component::Normal(p) => {
                let p = p.to_str().ok_or_else(not_found)?;
                if p.starts_with('.') || p.contains('\\') {
                    return Err(not_found());
                }
                parts.push(p);
            }
            _ => return Err(not_found()),
        }
    }
    let (run_id, rest) = parts.split_first().ok_or_else(not_found)?;
    if rest.is_empty() || !valid_run_id(run_id) || !store.exists(run_id) {
        return Err(not_found());
    }
    let path = rest.iter().fold(store.run_dir(run_id), |p, s| p.join(s));
    if !path.is_file() {
        return Err(not_found());
    }
    Ok(path)
}

async fn asset(
    State(s): State<AppState>,
    UrlPath(reference): UrlPath<String>,
) -> ApiResult<Response> {
    let path = resolve_asset(&s.store, &reference)?;
    let content_type = match path.extension().and_then(|e| e.to_str()) {
        Some("png") => "image/png",
        Some("csv") => "text/csv",
        Some("json") => "application/json",
        _ => "application/octet-stream",
    };
    let bytes = tokio::fs::read(&path)
        .await
        .map_err(|e| ServiceError::io(&path, e))?;
    Ok(([(header::CONTENT_TYPE, content_type)], Body::from(bytes)).into_response())
}
