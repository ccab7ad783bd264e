use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use vidi_core::clustering::{EmbeddingConfig, FitOptions};
use vidi_core::datapipe::{PreprocessConfig, Scenario};
use vidi_core::metrics::SelectionPolicy;
use vidi_core::saliency::OverlayStyle;

use crate::error::{Result, ServiceError};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelPaths {
    /// Layer manifest (`model.json`).
    pub manifest: PathBuf,
    /// Raw little-endian weight blob (`model.bin`).
    pub weights: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackgroundSample {
    /// Dataset manifest to sample from; the run's own manifest when absent.
    #[serde(default)]
    pub manifest: Option<PathBuf>,
    pub size: usize,
    #[serde(default)]
    pub seed: u64,
}

/// DeepSHAP reference set: the all-zeros normalized image and/or a seeded
/// sample of background images.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselinePolicy {
    pub include_zero: bool,
    pub background: Option<BackgroundSample>,
}

impl Default for BaselinePolicy {
    fn default() -> Self {
        Self {
            include_zero: true,
            background: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KRange {
    pub min: usize,
    pub max: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub manifest: PathBuf,
    pub model: ModelPaths,
    /// Expected scenario; checked against the manifest when set.
    #[serde(default)]
    pub scenario: Option<Scenario>,
    #[serde(default)]
    pub baselines: BaselinePolicy,
    #[serde(default)]
    pub embedding: EmbeddingConfig,
    #[serde(default)]
    pub k: Option<usize>,
    #[serde(default)]
    pub k_range: Option<KRange>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_n_init")]
    pub n_init: usize,
    #[serde(default)]
    pub fit: FitOptions,
    #[serde(default)]
    pub policy: SelectionPolicy,
    #[serde(default)]
    pub overlay: OverlayStyle,
    #[serde(default)]
    pub preprocess: PreprocessConfig,
    /// Write per-class contribution blobs under `attr/`.
    #[serde(default = "default_true")]
    pub store_attributions: bool,
}

fn default_n_init() -> usize {
    5
}

fn default_true() -> bool {
    true
}

impl RunConfig {
    /// Minimal config with defaults everywhere else.
    pub fn new(
        manifest: impl Into<PathBuf>,
        model_manifest: impl Into<PathBuf>,
        weights: impl Into<PathBuf>,
    ) -> Self {
        Self {
            manifest: manifest.into(),
            model: ModelPaths {
                manifest: model_manifest.into(),
                weights: weights.into(),
            },
            scenario: None,
            baselines: BaselinePolicy::default(),
            embedding: EmbeddingConfig::default(),
            k: None,
            k_range: None,
            seed: 0,
            n_init: default_n_init(),
            fit: FitOptions::default(),
            policy: SelectionPolicy::default(),
            overlay: OverlayStyle::default(),
            preprocess: PreprocessConfig::default(),
            store_attributions: true,
        }
    }

    /// Reads a config file; relative paths are resolved against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| ServiceError::io(path, e))?;
        let config: RunConfig = serde_json::from_str(&text).map_err(|e| ServiceError::Json {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Ok(config.resolved(base))
    }

    /// Makes every relative path absolute against `base`.
    pub fn resolved(mut self, base: &Path) -> Self {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.manifest);
        fix(&mut self.model.manifest);
        fix(&mut self.model.weights);
        if let Some(bg) = self.baselines.background.as_mut() {
            if let Some(m) = bg.manifest.as_mut() {
                fix(m);
            }
        }
        self
    }

    /// Checks the parameter invariants, without touching the filesystem.
    pub fn validate_params(&self) -> Result<()> {
        let bad = |m: String| Err(ServiceError::InvalidConfig(m));
        match (self.k, self.k_range) {
            (Some(_), Some(_)) => return bad("set either k or k_range, not both".into()),
            (None, None) => return bad("one of k or k_range is required".into()),
            (Some(0), None) => return bad("k must be at least 1".into()),
            (None, Some(r)) if r.min < 2 || r.min > r.max => {
                return bad(format!(
                    "k_range {}..={} must satisfy 2 <= min <= max",
                    r.min, r.max
                ))
            }
            _ => {}
        }
        if self.n_init == 0 {
            return bad("n_init must be at least 1".into());
        }
        if !self.baselines.include_zero
            && self
                .baselines
                .background
                .as_ref()
                .is_none_or(|b| b.size == 0)
        {
            return bad("baseline policy selects no baselines".into());
        }
        if self.embedding.grid == 0 {
            return bad("embedding grid must be positive".into());
        }
        self.overlay.validate()?;
        self.preprocess.validate()?;
        Ok(())
    }

    /// Full validation: parameters plus existence of every referenced file.
    pub fn validate(&self) -> Result<()> {
        self.validate_params()?;
        let mut paths = vec![&self.manifest, &self.model.manifest, &self.model.weights];
        if let Some(m) = self
            .baselines
            .background
            .as_ref()
            .and_then(|b| b.manifest.as_ref())
        {
            paths.push(m);
        }
        for p in paths {
            if !p.is_file() {
                return Err(ServiceError::InvalidConfig(format!(
                    "{} does not exist",
                    p.display()
                )));
            }
        }
        Ok(())
    }
}
