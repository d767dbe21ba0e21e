use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use crate::config::sha256_hex;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    Partial,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    pub path: PathBuf,
    pub sha256: String,
}

/// Record of one command invocation.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub command: String,
    pub config_path: Option<PathBuf>,
    pub config_sha256: String,
    pub seed: u64,
    pub status: RunStatus,
    pub artifacts: Vec<Artifact>,
    pub failures: Vec<String>,
    /// Hash of every field above; timestamps are left out.
    pub content_sha256: String,
    pub started_at: f64,
    pub finished_at: f64,
}

pub fn unix_now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

/// Writes `bytes` through a temporary sibling and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp).with_context(|| format!("creating {}", tmp.display()))?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path).with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

pub fn artifact(path: &Path) -> Result<Artifact> {
    let bytes = fs::read(path).with_context(|| format!("hashing {}", path.display()))?;
    Ok(Artifact { path: path.to_path_buf(), sha256: sha256_hex(&bytes) })
}

impl RunManifest {
    pub fn begin(command: &str, config_path: Option<PathBuf>, config_sha256: &str, seed: u64) -> Self {
        RunManifest {
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            config_path,
            config_sha256: config_sha256.into(),
            seed,
            status: RunStatus::Failed,
            artifacts: Vec::new(),
            failures: Vec::new(),
            content_sha256: String::new(),
            started_at: unix_now(),
            finished_at: 0.0,
        }
    }

    pub fn add(&mut self, path: &Path) -> Result<()> {
        self.artifacts.push(artifact(path)?);
        Ok(())
    }

    fn content_hash(&self) -> String {
        let stable = serde_json::json!({
            "version": self.version,
            "command": self.command,
            "config_path": self.config_path,
            "config_sha256": self.config_sha256,
            "seed": self.seed,
            "status": self.status,
            "artifacts": self.artifacts,
            "failures": self.failures,
        });
        sha256_hex(stable.to_string().as_bytes())
    }

    pub fn finish(mut self, status: RunStatus, path: &Path) -> Result<Self> {
        self.status = status;
        self.finished_at = unix_now();
        self.content_sha256 = self.content_hash();
        write_atomic(path, &serde_json::to_vec_pretty(&self)?)?;
        Ok(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn content_hash_ignores_timestamps() {
        let dir = tempfile::tempdir().unwrap();
        let a = RunManifest::begin("x", None, "abc", 1).finish(RunStatus::Completed, &dir.path().join("a.json")).unwrap();
        std::thread::sleep(std::time::Duration::from_millis(5));
        let b = RunManifest::begin("x", None, "abc", 1).finish(RunStatus::Completed, &dir.path().join("b.json")).unwrap();
        assert_eq!(a.content_sha256, b.content_sha256);
        assert_ne!(a.finished_at, b.finished_at);
        let c = RunManifest::begin("x", None, "abc", 2).finish(RunStatus::Completed, &dir.path().join("c.json")).unwrap();
        assert_ne!(a.content_sha256, c.content_sha256);
        let back: RunManifest = serde_json::from_slice(&fs::read(dir.path().join("a.json")).unwrap()).unwrap();
        assert_eq!(back.content_sha256, a.content_sha256);
    }
}
