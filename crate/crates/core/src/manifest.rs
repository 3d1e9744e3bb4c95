//! Run manifests: what produced an artifact directory, and from which data.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Flat `key -> value` snapshot of the configuration.
    pub config: BTreeMap<String, String>,
    pub dataset: String,
    pub dataset_sha256: String,
    pub seed: u64,
    pub git_describe: String,
    pub started_unix: u64,
    pub finished_unix: u64,
    /// Files written next to the manifest, relative to its directory.
    pub outputs: Vec<String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(sha256_hex(&std::fs::read(path)?))
}

/// Seconds since the epoch, pinned by `SOURCE_DATE_EPOCH` when set so that
/// reruns can produce byte-identical manifests.
pub fn now_unix() -> u64 {
    if let Some(v) = std::env::var("SOURCE_DATE_EPOCH").ok().and_then(|s| s.trim().parse().ok()) {
        return v;
    }
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

/// `git describe --always --dirty` of the working directory, or "unknown".
pub fn git_describe() -> String {
    Command::new("git")
        .args(["describe", "--always", "--dirty", "--tags"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| "unknown".into())
}

/// Parses `key = value` lines into a map.
pub fn config_map(text: &str) -> BTreeMap<String, String> {
    text.lines()
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .collect()
}

impl RunManifest {
    pub fn write(&self, dir: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(dir.join(MANIFEST_FILE), text)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path)
            .map_err(|e| Error::Data(format!("cannot read manifest {}: {e}", path.display())))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Fails unless `dataset` hashes to the recorded digest.
    pub fn verify_dataset(&self, dataset: &Path) -> Result<()> {
        let actual = sha256_file(dataset)?;
        if actual != self.dataset_sha256 {
            return Err(Error::Data(format!(
                "dataset hash mismatch for {}: manifest records {}, file is {}",
                dataset.display(),
                self.dataset_sha256,
                actual
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn round_trip_and_verify() {
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("d.bin");
        std::fs::write(&data, b"payload").unwrap();
        let m = RunManifest {
            command: "train".into(),
            config: config_map("seed = 3\nlr_task = 0.1\n"),
            dataset: data.display().to_string(),
            dataset_sha256: sha256_file(&data).unwrap(),
            seed: 3,
            git_describe: "unknown".into(),
            started_unix: 1,
            finished_unix: 2,
            outputs: vec!["history.csv".into()],
        };
        m.write(dir.path()).unwrap();
        let back = RunManifest::load(dir.path()).unwrap();
        assert_eq!(back, m);
        back.verify_dataset(&data).unwrap();
        std::fs::write(&data, b"changed").unwrap();
        assert!(matches!(back.verify_dataset(&data), Err(Error::Data(_))));
    }
}
