use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use chrono::{DateTime, Utc};
use serde::{de::DeserializeOwned, Deserialize, Serialize};
use vidi_core::datapipe::Scenario;
use vidi_core::metrics::{ClusterQuality, KSweepResult};

use crate::config::RunConfig;
use crate::error::{Result, ServiceError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Pending,
    Running,
    Complete,
    Failed,
}

impl RunStatus {
    pub fn can_become(self, next: RunStatus) -> bool {
        matches!(
            (self, next),
            (RunStatus::Pending, RunStatus::Running)
                | (RunStatus::Running, RunStatus::Complete)
                | (RunStatus::Running, RunStatus::Failed)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub kind: String,
    pub message: String,
}

impl From<&ServiceError> for ErrorReport {
    fn from(e: &ServiceError) -> Self {
        Self {
            kind: e.kind().to_string(),
            message: e.to_string(),
        }
    }
}

/// Paths of the artifacts of a complete run, relative to its directory.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssetRefs {
    pub images: Option<String>,
    pub features: Option<String>,
    pub clusters: Option<String>,
    pub centroids: Option<String>,
    pub sweep_csv: Option<String>,
    pub sweep_json: Option<String>,
    pub report: Option<String>,
    pub overlays: Option<String>,
    pub attributions: Option<String>,
    pub galleries: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    #[serde(default)]
    pub parent: Option<String>,
    pub config: RunConfig,
    pub status: RunStatus,
    #[serde(default)]
    pub scenario: Option<Scenario>,
    #[serde(default)]
    pub class_names: Vec<String>,
    #[serde(default)]
    pub num_images: usize,
    /// Number of clusters of the final model.
    #[serde(default)]
    pub k: Option<usize>,
    #[serde(default)]
    pub quality: Option<ClusterQuality>,
    #[serde(default)]
    pub sweep: Option<KSweepResult>,
    #[serde(default)]
    pub assets: AssetRefs,
    #[serde(default)]
    pub error: Option<ErrorReport>,
    pub created_at: DateTime<Utc>,
    #[serde(default)]
    pub started_at: Option<DateTime<Utc>>,
    #[serde(default)]
    pub completed_at: Option<DateTime<Utc>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub run_id: String,
    pub status: RunStatus,
    pub parent: Option<String>,
    pub created_at: DateTime<Utc>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct Index {
    runs: Vec<IndexEntry>,
}

/// Directory-per-run persistence under `<root>/runs/<run_id>/`, plus
/// `<root>/index.json` listing every run.
pub struct RunStore {
    root: PathBuf,
    ids: Mutex<ulid::Generator>,
    writers: Mutex<HashMap<String, Arc<Mutex<()>>>>,
    index: Mutex<()>,
}

pub fn valid_run_id(id: &str) -> bool {
    !id.is_empty()
        && id.len() <= 64
        && id
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_')
}

pub(crate) fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let bytes = serde_json::to_vec_pretty(value).map_err(|e| ServiceError::Json {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let tmp = path.with_extension("json.tmp");
    fs::write(&tmp, bytes).map_err(|e| ServiceError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| ServiceError::io(path, e))
}

pub(crate) fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| ServiceError::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| ServiceError::Json {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

impl std::fmt::Debug for RunStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RunStore")
            .field("root", &self.root)
            .finish_non_exhaustive()
    }
}

impl RunStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        let runs = root.join("runs");
        fs::create_dir_all(&runs).map_err(|e| ServiceError::io(&runs, e))?;
        Ok(Self {
            root,
            ids: Mutex::new(ulid::Generator::new()),
            writers: Mutex::new(HashMap::new()),
            index: Mutex::new(()),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn run_dir(&self, run_id: &str) -> PathBuf {
        self.root.join("runs").join(run_id)
    }

    /// Lexicographically sortable id, monotonic within this process.
    pub fn new_run_id(&self) -> String {
        let mut ids = self.ids.lock().expect("id generator poisoned");
        ids.generate()
            .expect("ulid space exhausted within one millisecond")
            .to_string()
    }

    /// Lock held by the single writer of a run.
    pub fn writer(&self, run_id: &str) -> Arc<Mutex<()>> {
        let mut w = self.writers.lock().expect("writer table poisoned");
        w.entry(run_id.to_string()).or_default().clone()
    }

    /// Creates a pending run with the given id. Fails if the id is taken.
    pub fn create(
        &self,
        run_id: &str,
        config: RunConfig,
        parent: Option<String>,
    ) -> Result<RunRecord> {
        if !valid_run_id(run_id) {
            return Err(ServiceError::InvalidConfig(format!(
                "invalid run id {run_id:?}"
            )));
        }
        let dir = self.run_dir(run_id);
        fs::create_dir(&dir).map_err(|e| ServiceError::io(&dir, e))?;
        let record = RunRecord {
            run_id: run_id.to_string(),
            parent,
            config,
            status: RunStatus::Pending,
            scenario: None,
            class_names: Vec::new(),
            num_images: 0,
            k: None,
            quality: None,
            sweep: None,
            assets: AssetRefs::default(),
            error: None,
            created_at: Utc::now(),
            started_at: None,
            completed_at: None,
        };
        self.save(&record)?;
        Ok(record)
    }

    pub fn exists(&self, run_id: &str) -> bool {
        valid_run_id(run_id) && self.run_dir(run_id).join("run.json").is_file()
    }

    pub fn get(&self, run_id: &str) -> Result<RunRecord> {
        if !self.exists(run_id) {
            return Err(ServiceError::RunNotFound(run_id.to_string()));
        }
        read_json(&self.run_dir(run_id).join("run.json"))
    }

    /// Like [`RunStore::get`] but requires the run to be complete.
    pub fn get_complete(&self, run_id: &str) -> Result<RunRecord> {
        let record = self.get(run_id)?;
        if record.status != RunStatus::Complete {
            return Err(ServiceError::RunNotComplete {
                run_id: run_id.to_string(),
                status: record.status,
            });
        }
        Ok(record)
    }

    /// Every run found on disk, oldest first.
    pub fn list(&self) -> Result<Vec<RunRecord>> {
        let runs = self.root.join("runs");
        let mut ids = Vec::new();
        for entry in fs::read_dir(&runs).map_err(|e| ServiceError::io(&runs, e))? {
            let entry = entry.map_err(|e| ServiceError::io(&runs, e))?;
            if let Some(id) = entry.file_name().to_str() {
                if self.exists(id) {
                    ids.push(id.to_string());
                }
            }
        }
        ids.sort();
        ids.iter().map(|id| self.get(id)).collect()
    }

    /// Persists `record`, enforcing the status state machine against the
    /// stored copy.
    pub fn save(&self, record: &RunRecord) -> Result<()> {
        let path = self.run_dir(&record.run_id).join("run.json");
        if path.is_file() {
            let current: RunRecord = read_json(&path)?;
            if current.status != record.status && !current.status.can_become(record.status) {
                return Err(ServiceError::InvalidConfig(format!(
                    "run {} cannot move from {:?} to {:?}",
                    record.run_id, current.status, record.status
                )));
            }
        }
        write_json(&path, record)?;
        self.refresh_index()
    }

    fn refresh_index(&self) -> Result<()> {
        let _guard = self.index.lock().expect("index lock poisoned");
        let runs = self
            .list()?
            .into_iter()
            .map(|r| IndexEntry {
                run_id: r.run_id,
                status: r.status,
                parent: r.parent,
                created_at: r.created_at,
            })
            .collect();
        write_json(&self.root.join("index.json"), &Index { runs })
    }

    /// Entries of `index.json`.
    pub fn index(&self) -> Result<Vec<IndexEntry>> {
        let path = self.root.join("index.json");
        if !path.is_file() {
            return Ok(Vec::new());
        }
        Ok(read_json::<Index>(&path)?.runs)
    }
}
