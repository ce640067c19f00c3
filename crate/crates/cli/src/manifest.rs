//! Run manifest: what a pipeline run produced and how to reproduce it. One
//! JSON document per run directory, rewritten atomically after every stage so
//! an interrupted run still leaves an accurate record on disk.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use oodgen_core::sha256_hex;
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    /// Path relative to the run directory, `/`-separated.
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageStatus {
    Completed,
    Failed,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub status: StageStatus,
    pub started_at: String,
    pub finished_at: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub artifacts: Vec<Artifact>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    /// Deterministic function of config hash and seed, so reruns of the same
    /// inputs are recognizably the same run.
    pub run_id: String,
    pub created_at: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finished_at: Option<String>,
    pub config_path: String,
    pub config_sha256: String,
    pub seed: u64,
    pub provider: String,
    /// Model ids actually used, keyed by purpose ("chat", "embedding").
    pub model_ids: BTreeMap<String, String>,
    /// Version counter of each tree artifact the run wrote.
    pub tree_versions: BTreeMap<String, u64>,
    pub stages: Vec<StageRecord>,
}

impl RunManifest {
    pub fn new(
        run_id: String,
        created_at: String,
        config_path: String,
        config_sha256: String,
        seed: u64,
        provider: String,
    ) -> Self {
        RunManifest {
            schema_version: MANIFEST_SCHEMA_VERSION,
            run_id,
            created_at,
            finished_at: None,
            config_path,
            config_sha256,
            seed,
            provider,
            model_ids: BTreeMap::new(),
            tree_versions: BTreeMap::new(),
            stages: Vec::new(),
        }
    }

    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        text
    }

    /// Write-then-rename so readers never observe a torn manifest.
    pub fn save_atomic(&self, run_dir: &Path) -> Result<PathBuf, CliError> {
        let final_path = run_dir.join(MANIFEST_FILE);
        let tmp_path = run_dir.join(format!("{MANIFEST_FILE}.tmp"));
        {
            let mut f = std::fs::File::create(&tmp_path).map_err(|e| CliError::io(&tmp_path, e))?;
            f.write_all(self.to_json().as_bytes()).map_err(|e| CliError::io(&tmp_path, e))?;
            f.sync_all().map_err(|e| CliError::io(&tmp_path, e))?;
        }
        std::fs::rename(&tmp_path, &final_path).map_err(|e| CliError::io(&final_path, e))?;
        Ok(final_path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CliError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
    }

    /// Every artifact any stage recorded, in recording order.
    pub fn artifacts(&self) -> impl Iterator<Item = &Artifact> {
        self.stages.iter().flat_map(|s| s.artifacts.iter())
    }

    /// Check that each recorded artifact still exists under `run_dir` with
    /// the recorded content hash; returns human-readable violations.
    pub fn verify_artifacts(&self, run_dir: &Path) -> Vec<String> {
        let mut problems = Vec::new();
        for artifact in self.artifacts() {
            let path = run_dir.join(&artifact.path);
            match std::fs::read(&path) {
                Ok(bytes) => {
                    let got = sha256_hex(&bytes);
                    if got != artifact.sha256 {
                        problems.push(format!(
                            "{}: hash mismatch (manifest {}, disk {})",
                            artifact.path, artifact.sha256, got
                        ));
                    }
                }
                Err(e) => problems.push(format!("{}: unreadable: {e}", artifact.path)),
            }
        }
        problems
    }
}

/// Stable run identifier: first 12 hex chars of sha256(config_sha256 | seed).
pub fn derive_run_id(config_sha256: &str, seed: u64) -> String {
    let digest = sha256_hex(format!("{config_sha256}:{seed}").as_bytes());
    format!("run-{}", &digest[..12])
}

/// Hash a file already on disk for artifact records.
pub fn file_sha256(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(sha256_hex(&bytes))
}
