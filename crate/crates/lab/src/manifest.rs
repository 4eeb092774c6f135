//! The run manifest: which stages completed, which artifacts they wrote,
//! and the content hashes that make reruns skippable and auditable.

use crate::error::Result;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArtifactRecord {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageRecord {
    pub complete: bool,
    pub artifacts: Vec<ArtifactRecord>,
    /// Unix seconds; informational only, excluded from determinism checks.
    pub completed_unix: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_fingerprint: String,
    /// Full resolved config for provenance.
    pub config_toml: String,
    pub run_seed: u64,
    pub stages: BTreeMap<String, StageRecord>,
}

pub fn hash_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(hex::encode(hasher.finalize()))
}

impl RunManifest {
    pub fn new(config_fingerprint: String, config_toml: String, run_seed: u64) -> Self {
        Self {
            config_fingerprint,
            config_toml,
            run_seed,
            stages: BTreeMap::new(),
        }
    }

    pub fn path_in(dir: &Path) -> PathBuf {
        dir.join("manifest.json")
    }

    pub fn load(dir: &Path) -> Result<Option<Self>> {
        let path = Self::path_in(dir);
        if !path.exists() {
            return Ok(None);
        }
        let text = std::fs::read_to_string(&path)?;
        Ok(Some(serde_json::from_str(&text)?))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(Self::path_in(dir), text)?;
        Ok(())
    }

    /// A stage is skippable when it completed under the same config and
    /// every artifact still exists with its recorded hash.
    pub fn stage_is_valid(&self, stage: &str, dir: &Path) -> bool {
        let Some(record) = self.stages.get(stage) else {
            return false;
        };
        if !record.complete {
            return false;
        }
        record.artifacts.iter().all(|a| {
            let path = dir.join(&a.path);
            path.exists() && hash_file(&path).map(|h| h == a.sha256).unwrap_or(false)
        })
    }

    /// Record a completed stage with hashes of its artifacts (paths
    /// relative to the run directory).
    pub fn record_stage(&mut self, stage: &str, dir: &Path, artifacts: &[&str]) -> Result<()> {
        let records = artifacts
            .iter()
            .map(|rel| {
                Ok(ArtifactRecord {
                    path: rel.to_string(),
                    sha256: hash_file(&dir.join(rel))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let completed_unix = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        self.stages.insert(
            stage.to_string(),
            StageRecord {
                complete: true,
                artifacts: records,
                completed_unix,
            },
        );
        Ok(())
    }

    pub fn artifact_paths(&self) -> Vec<String> {
        self.stages
            .values()
            .flat_map(|s| s.artifacts.iter().map(|a| a.path.clone()))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_validity_tracks_hashes() {
        let dir = tempfile::tempdir().unwrap();
        let mut manifest = RunManifest::new("fp".into(), "cfg".into(), 0);
        std::fs::write(dir.path().join("a.txt"), b"hello").unwrap();
        manifest.record_stage("stage1", dir.path(), &["a.txt"]).unwrap();
        assert!(manifest.stage_is_valid("stage1", dir.path()));
        assert!(!manifest.stage_is_valid("other", dir.path()));

        // Tampering invalidates the stage.
        std::fs::write(dir.path().join("a.txt"), b"tampered").unwrap();
        assert!(!manifest.stage_is_valid("stage1", dir.path()));
    }

    #[test]
    fn manifest_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let mut manifest = RunManifest::new("fp".into(), "cfg".into(), 3);
        std::fs::write(dir.path().join("x.bin"), b"abc").unwrap();
        manifest.record_stage("s", dir.path(), &["x.bin"]).unwrap();
        manifest.save(dir.path()).unwrap();
        let back = RunManifest::load(dir.path()).unwrap().unwrap();
        assert_eq!(back.config_fingerprint, "fp");
        assert_eq!(back.run_seed, 3);
        assert!(back.stage_is_valid("s", dir.path()));
    }
}
