#![allow(dead_code)]

use std::path::{Path, PathBuf};

use tempfile::TempDir;
use vidi_service::config::KRange;
use vidi_service::demo::write_demo;
use vidi_service::{RunConfig, RunStore};

pub struct Fixture {
    pub dir: TempDir,
    pub config: RunConfig,
    pub store: RunStore,
}

impl Fixture {
    pub fn data_dir(&self) -> PathBuf {
        self.dir.path().join("data")
    }
}

/// Synthetic severity fixture with `per_class` images per class and a store.
pub fn fixture(per_class: usize) -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("input");
    std::fs::create_dir_all(&input).unwrap();
    let path = write_demo(&input, per_class, 7, KRange { min: 2, max: 6 }).unwrap();
    let config = RunConfig::load(&path).unwrap();
    let store = RunStore::open(dir.path().join("data")).unwrap();
    Fixture { dir, config, store }
}

pub fn with_k(config: &RunConfig, k: usize) -> RunConfig {
    let mut c = config.clone();
    c.k = Some(k);
    c.k_range = None;
    c
}

pub fn files_under(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}
