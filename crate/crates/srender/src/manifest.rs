//! Run provenance. Every command writes a `RunManifest` into its output
//! directory before doing any work: the exact config, content hashes of the
//! input data, the line-drawing operator identity, seed, and code version.
//! Two runs with equal manifest fingerprints are byte-for-byte repeatable.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::training::TrainConfig;

pub const MANIFEST_NAME: &str = "run_manifest.json";

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("manifest encode/decode: {0}")]
    Serde(String),
    #[error("manifest is immutable: {0}")]
    Immutable(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: TrainConfig,
    /// Input name to SHA-256 of the file contents.
    pub data_hashes: BTreeMap<String, String>,
    pub operator_fingerprint: String,
    pub seed: u64,
    pub version: String,
    pub created_utc: String,
}

/// Fingerprint payload: everything except the timestamp, field for field.
#[derive(Serialize)]
struct FingerprintView<'a> {
    command: &'a str,
    config: &'a TrainConfig,
    data_hashes: &'a BTreeMap<String, String>,
    operator_fingerprint: &'a str,
    seed: u64,
    version: &'a str,
}

impl RunManifest {
    pub fn new(
        command: &str,
        config: TrainConfig,
        data_hashes: BTreeMap<String, String>,
        operator_fingerprint: &str,
    ) -> Self {
        Self {
            command: command.to_string(),
            seed: config.seed,
            config,
            data_hashes,
            operator_fingerprint: operator_fingerprint.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            created_utc: chrono::Utc::now().to_rfc3339(),
        }
    }

    /// Identity of the run's inputs. Timestamps are excluded: two manifests
    /// with equal fingerprints promise identical outputs.
    pub fn fingerprint(&self) -> String {
        let view = FingerprintView {
            command: &self.command,
            config: &self.config,
            data_hashes: &self.data_hashes,
            operator_fingerprint: &self.operator_fingerprint,
            seed: self.seed,
            version: &self.version,
        };
        let json = serde_json::to_string(&view).expect("manifest view serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    /// Writes the manifest, refusing to change an existing one. Rewriting
    /// with an equal fingerprint (a resumed run) keeps the original file.
    pub fn write(&self, path: &Path) -> Result<(), ManifestError> {
        if path.exists() {
            let existing = RunManifest::read(path)?;
            if existing.fingerprint() == self.fingerprint() {
                return Ok(());
            }
            return Err(ManifestError::Immutable(format!(
                "{} already records fingerprint {}, refusing to overwrite with {}",
                path.display(),
                existing.fingerprint(),
                self.fingerprint()
            )));
        }
        let json =
            serde_json::to_string_pretty(self).map_err(|e| ManifestError::Serde(e.to_string()))?;
        std::fs::write(path, json + "\n")?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<RunManifest, ManifestError> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| ManifestError::Serde(e.to_string()))
    }
}

/// SHA-256 of a file's contents, streamed.
pub fn hash_file(path: &Path) -> Result<String, ManifestError> {
    let mut f = std::fs::File::open(path)?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn manifest(seed: u64) -> RunManifest {
        let cfg = TrainConfig {
            seed,
            ..TrainConfig::default()
        };
        let mut hashes = BTreeMap::new();
        hashes.insert("pairs".to_string(), "ab".repeat(32));
        RunManifest::new("train", cfg, hashes, "0011223344556677")
    }

    #[test]
    fn fingerprint_ignores_timestamps_but_not_inputs() {
        let mut a = manifest(1);
        let mut b = manifest(1);
        a.created_utc = "2024-01-01T00:00:00+00:00".into();
        b.created_utc = "2025-06-30T12:00:00+00:00".into();
        assert_eq!(a.fingerprint(), b.fingerprint());
        let c = manifest(2);
        assert_ne!(a.fingerprint(), c.fingerprint());
        let mut d = manifest(1);
        d.config.weights.lambda_str = 0.0;
        assert_ne!(a.fingerprint(), d.fingerprint());
    }

    #[test]
    fn write_read_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(MANIFEST_NAME);
        let m = manifest(3);
        m.write(&path).unwrap();
        let back = RunManifest::read(&path).unwrap();
        assert_eq!(m, back);
    }

    #[test]
    fn existing_manifests_are_immutable() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(MANIFEST_NAME);
        manifest(4).write(&path).unwrap();
        // Same inputs, later timestamp: accepted, original kept.
        let original = std::fs::read_to_string(&path).unwrap();
        manifest(4).write(&path).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), original);
        // Different inputs: refused.
        assert!(matches!(
            manifest(5).write(&path),
            Err(ManifestError::Immutable(_))
        ));
    }

    #[test]
    fn file_hashes_match_a_direct_digest() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.bin");
        std::fs::write(&path, b"stroke by stroke").unwrap();
        let expect = hex::encode(Sha256::digest(b"stroke by stroke"));
        assert_eq!(hash_file(&path).unwrap(), expect);
    }
}
