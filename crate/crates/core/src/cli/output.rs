//! Output directory bookkeeping and the run manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng::derive_seed;

#[derive(Debug, Serialize)]
pub struct FileEntry {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub config: serde_json::Value,
    pub master_seed: u64,
    /// Every derived sub-seed, keyed by its label.
    pub seeds: BTreeMap<String, u64>,
    pub started_at: String,
    pub wall_clock_secs: f64,
    pub files: Vec<FileEntry>,
}

/// Tracks everything a command writes so the manifest can list it.
pub struct RunOutput {
    root: PathBuf,
    files: Vec<String>,
    command: String,
    master_seed: u64,
    seeds: BTreeMap<String, u64>,
    started: Instant,
    started_at: String,
}

impl RunOutput {
    pub fn create(root: &Path, command: &str, master_seed: u64) -> Result<Self> {
        fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        Ok(RunOutput {
            root: root.to_path_buf(),
            files: Vec::new(),
            command: command.into(),
            master_seed,
            seeds: BTreeMap::new(),
            started: Instant::now(),
            started_at: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Derives a labelled sub-seed and records it in the lineage.
    pub fn seed(&mut self, label: &str) -> u64 {
        let seed = derive_seed(self.master_seed, label);
        self.seeds.insert(label.into(), seed);
        seed
    }

    pub fn write_bytes(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.root.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        self.track(name);
        Ok(path)
    }

    /// Registers a file written directly under the root.
    pub fn track(&mut self, name: &str) {
        if !self.files.iter().any(|f| f == name) {
            self.files.push(name.into());
        }
    }

    pub fn write_csv<S: AsRef<str>>(&mut self, name: &str, header: &[&str], rows: &[Vec<S>]) -> Result<PathBuf> {
        let mut writer = csv::Writer::from_writer(Vec::new());
        writer.write_record(header)?;
        for row in rows {
            writer.write_record(row.iter().map(AsRef::as_ref))?;
        }
        let bytes = writer
            .into_inner()
            .map_err(|e| Error::io(self.root.join(name), e.into_error()))?;
        self.write_bytes(name, &bytes)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<PathBuf> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write_bytes(name, text.as_bytes())
    }

    /// Writes `run_manifest.json` via a temporary file and a rename.
    pub fn finish(self, config: serde_json::Value) -> Result<PathBuf> {
        let files = self
            .files
            .iter()
            .map(|name| {
                let path = self.root.join(name);
                let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
                Ok(FileEntry {
                    path: name.clone(),
                    bytes: bytes.len() as u64,
                    sha256: hex::encode(Sha256::digest(&bytes)),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let manifest = RunManifest {
            command: self.command,
            version: env!("CARGO_PKG_VERSION").into(),
            config,
            master_seed: self.master_seed,
            seeds: self.seeds,
            started_at: self.started_at,
            wall_clock_secs: self.started.elapsed().as_secs_f64(),
            files,
        };
        let target = self.root.join("run_manifest.json");
        let tmp = self.root.join(".run_manifest.json.tmp");
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        fs::write(&tmp, text).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, &target).map_err(|e| Error::io(&target, e))?;
        Ok(target)
    }
}

/// Shortest round-trip formatting; stable across runs and platforms.
pub fn num(x: f64) -> String {
    x.to_string()
}
