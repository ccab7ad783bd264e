use std::path::{Path, PathBuf};

use vidi_core::datapipe::PreprocessConfig;
use vidi_core::model_io::save_network;
use vidi_core::synthetic::{severity_network, write_severity_dataset};

use crate::config::{KRange, RunConfig};
use crate::error::Result;
use crate::store::write_json;

/// Writes a synthetic severity dataset, the matching hand-built model and a
/// `config.json` sweeping `k` over `k_range` into `dir`. Returns the config
/// path.
pub fn write_demo(dir: &Path, per_class: usize, seed: u64, k_range: KRange) -> Result<PathBuf> {
    let preprocess = PreprocessConfig::default();
    write_severity_dataset(dir, per_class, 256, seed)?;
    let net = severity_network(&preprocess)?;
    save_network(&net, &dir.join("model.json"), &dir.join("model.bin"))?;
    let mut config = RunConfig::new("manifest.json", "model.json", "model.bin");
    config.k_range = Some(k_range);
    config.seed = seed;
    let path = dir.join("config.json");
    write_json(&path, &config)?;
    Ok(path)
}
