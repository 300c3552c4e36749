//! Output directory bookkeeping: every written file is hashed into
//! `manifest.json`.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use chrono::{SecondsFormat, Utc};
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Serialize)]
pub struct FileEntry {
    pub name: String,
    pub bytes: usize,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: Vec<String>,
    pub config: serde_json::Value,
    pub seeds: Vec<CellSeed>,
    pub threads: usize,
    pub started: String,
    pub finished: String,
    pub files: Vec<FileEntry>,
}

#[derive(Debug, Serialize)]
pub struct CellSeed {
    pub n_spins: usize,
    pub omega: f64,
    pub seed: u64,
}

pub struct OutputDir {
    root: PathBuf,
    files: Vec<FileEntry>,
    started: String,
}

pub fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
        Ok(Self {
            root: root.to_path_buf(),
            files: Vec::new(),
            started: now(),
        })
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.root.join(name);
        fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        self.files.push(FileEntry {
            name: name.to_string(),
            bytes: bytes.len(),
            sha256: hex::encode(Sha256::digest(bytes)),
        });
        Ok(())
    }

    pub fn finish(
        self,
        config: serde_json::Value,
        seeds: Vec<CellSeed>,
        threads: usize,
    ) -> Result<PathBuf> {
        let manifest = Manifest {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command: std::env::args().collect(),
            config,
            seeds,
            threads,
            started: self.started,
            finished: now(),
            files: self.files,
        };
        let path = self.root.join("manifest.json");
        fs::write(&path, serde_json::to_vec_pretty(&manifest)?)
            .with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}

/// File-name fragment for a parameter value, e.g. 1.5 -> "1p5".
pub fn tag(x: f64) -> String {
    format!("{x}").replace('.', "p").replace('-', "m")
}
