//! Run manifest with content hashes, and the per-run writer lock.

use std::fs;
use std::io::ErrorKind;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const LOCK_FILE: &str = ".lock";

/// Pipeline stages in dependency order.
pub const STAGE_ORDER: [&str; 5] = ["simulate", "train", "train-vae", "reconstruct", "enhance"];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    /// Relative to the run directory, `/`-separated.
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    pub config_sha256: String,
    pub artifacts: Vec<Artifact>,
    /// Stage-specific facts such as frame counts or precision.
    pub details: serde_json::Map<String, serde_json::Value>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub seed: u64,
    pub config: serde_json::Value,
    /// In execution order.
    pub stages: Vec<StageRecord>,
}

pub fn sha256_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(sha256_bytes(&bytes))
}

/// Hash of a JSON value's compact serialization.
pub fn sha256_json(value: &serde_json::Value) -> String {
    sha256_bytes(value.to_string().as_bytes())
}

/// Stages that consume the output of `stage`.
fn downstream(stage: &str) -> &'static [&'static str] {
    match stage {
        "simulate" => &["train", "train-vae", "reconstruct", "enhance"],
        "train" | "train-vae" => &["reconstruct", "enhance"],
        "reconstruct" => &["enhance"],
        _ => &[],
    }
}

impl RunManifest {
    pub fn new(run_id: String, seed: u64, config: serde_json::Value) -> Self {
        Self {
            run_id,
            seed,
            config,
            stages: Vec::new(),
        }
    }

    pub fn load(dir: &Path) -> Result<Option<Self>, CliError> {
        let path = dir.join(MANIFEST_FILE);
        match fs::read_to_string(&path) {
            Ok(text) => serde_json::from_str(&text)
                .map(Some)
                .map_err(|e| CliError::Internal(format!("{}: {e}", path.display()))),
            Err(e) if e.kind() == ErrorKind::NotFound => Ok(None),
            Err(e) => Err(CliError::io(&path, e)),
        }
    }

    pub fn save(&self, dir: &Path) -> Result<(), CliError> {
        let path = dir.join(MANIFEST_FILE);
        let mut text = serde_json::to_string_pretty(self).map_err(|e| CliError::Internal(e.to_string()))?;
        text.push('\n');
        fs::write(&path, text).map_err(|e| CliError::io(&path, e))
    }

    pub fn stage(&self, name: &str) -> Option<&StageRecord> {
        self.stages.iter().find(|s| s.stage == name)
    }

    /// Insert or replace `record`; records of stages that depend on it are
    /// dropped because their inputs changed.
    pub fn record(&mut self, record: StageRecord) {
        let mut stale: Vec<&str> = downstream(&record.stage).to_vec();
        // A reconstruction built on the AVAE does not depend on the plain VAE.
        let on_avae = self
            .stage("reconstruct")
            .and_then(|r| r.details.get("model"))
            .is_some_and(|m| m == "avae");
        if record.stage == "train-vae" && on_avae {
            stale.clear();
        }
        self.stages.retain(|s| s.stage != record.stage && !stale.contains(&s.stage.as_str()));
        self.stages.push(record);
    }

    /// Every referenced artifact exists and matches its hash.
    pub fn verify(&self, dir: &Path) -> Result<(), CliError> {
        for s in &self.stages {
            for a in &s.artifacts {
                let p = dir.join(&a.path);
                if sha256_file(&p)? != a.sha256 {
                    return Err(CliError::Internal(format!("artifact {} does not match its hash", a.path)));
                }
            }
        }
        Ok(())
    }
}

/// Hash the files at `paths` (absolute or relative to `dir`).
pub fn artifacts(dir: &Path, paths: &[PathBuf]) -> Result<Vec<Artifact>, CliError> {
    paths
        .iter()
        .map(|p| {
            let full = if p.is_absolute() { p.clone() } else { dir.join(p) };
            let rel = full.strip_prefix(dir).unwrap_or(&full);
            let path = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
            Ok(Artifact {
                path,
                sha256: sha256_file(&full)?,
            })
        })
        .collect()
}

/// Exclusive writer lock on a run directory, released on drop.
#[derive(Debug)]
pub struct RunLock {
    path: PathBuf,
}

impl RunLock {
    pub fn acquire(dir: &Path) -> Result<Self, CliError> {
        let path = dir.join(LOCK_FILE);
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(Self { path }),
            Err(e) if e.kind() == ErrorKind::AlreadyExists => Err(CliError::Internal(format!(
                "run directory {} is locked by another stage (remove {} if stale)",
                dir.display(),
                path.display()
            ))),
            Err(e) => Err(CliError::io(&path, e)),
        }
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}
