//! Single-file checkpoint: a one-line JSON header followed by the raw
//! little-endian f64 payload for every parameter in walk order, with value,
//! first moment, and second moment per parameter. The header carries the
//! architecture fingerprints and a SHA-256 of the payload; loading verifies
//! both before any parameter is overwritten.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ModelBundle, NetworksError, StrokeClassifier};
use crate::nn::{ParamRefs, ParamRefsMut};

const FORMAT: &str = "srender.ckpt";
const VERSION: u32 = 1;
const OPT_STATE_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format: String,
    pub version: u32,
    pub kind: String,
    pub fingerprints: BTreeMap<String, String>,
    pub epoch: usize,
    pub opt_state_version: u32,
    pub opt_g_t: u64,
    pub opt_d_t: u64,
    pub payload_len_bytes: u64,
    pub payload_sha256: String,
}

fn payload_of(params: &ParamRefs<'_>) -> Vec<u8> {
    let total: usize = params.iter().map(|(_, p)| p.len() * 3 * 8).sum();
    let mut out = Vec::with_capacity(total);
    for (_, p) in params {
        for v in p.value.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for v in p.m.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for v in p.v.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn write_checkpoint(
    path: &Path,
    kind: &str,
    fingerprints: BTreeMap<String, String>,
    epoch: usize,
    opt_g_t: u64,
    opt_d_t: u64,
    params: &ParamRefs<'_>,
) -> Result<(), NetworksError> {
    let payload = payload_of(params);
    let header = CheckpointHeader {
        format: FORMAT.into(),
        version: VERSION,
        kind: kind.into(),
        fingerprints,
        epoch,
        opt_state_version: OPT_STATE_VERSION,
        opt_g_t,
        opt_d_t,
        payload_len_bytes: payload.len() as u64,
        payload_sha256: sha256_hex(&payload),
    };
    let header_json =
        serde_json::to_string(&header).map_err(|e| NetworksError::Malformed(e.to_string()))?;
    let mut file = std::fs::File::create(path)?;
    file.write_all(header_json.as_bytes())?;
    file.write_all(b"\n")?;
    file.write_all(&payload)?;
    Ok(())
}

fn read_checkpoint(path: &Path) -> Result<(CheckpointHeader, Vec<u8>), NetworksError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let newline = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| NetworksError::Malformed("no header line".into()))?;
    let header: CheckpointHeader = serde_json::from_slice(&bytes[..newline])
        .map_err(|e| NetworksError::Malformed(format!("header: {e}")))?;
    if header.format != FORMAT || header.version != VERSION {
        return Err(NetworksError::HeaderMismatch(format!(
            "format {}/{} not supported",
            header.format, header.version
        )));
    }
    let payload = bytes[newline + 1..].to_vec();
    if payload.len() as u64 != header.payload_len_bytes {
        return Err(NetworksError::ChecksumMismatch(format!(
            "payload is {} bytes, header says {}",
            payload.len(),
            header.payload_len_bytes
        )));
    }
    let digest = sha256_hex(&payload);
    if digest != header.payload_sha256 {
        return Err(NetworksError::ChecksumMismatch(format!(
            "payload sha256 {digest} does not match header {}",
            header.payload_sha256
        )));
    }
    Ok((header, payload))
}

fn restore_params(payload: &[u8], mut params: ParamRefsMut<'_>) -> Result<(), NetworksError> {
    let expected: usize = params.iter().map(|(_, p)| p.len() * 3 * 8).sum();
    if payload.len() != expected {
        return Err(NetworksError::ChecksumMismatch(format!(
            "payload is {} bytes, parameter walk needs {expected}",
            payload.len()
        )));
    }
    let mut off = 0usize;
    let mut take = |dst: &mut ndarray::ArrayD<f64>| {
        for v in dst.iter_mut() {
            let mut b = [0u8; 8];
            b.copy_from_slice(&payload[off..off + 8]);
            *v = f64::from_le_bytes(b);
            off += 8;
        }
    };
    for (_, p) in params.iter_mut() {
        take(&mut p.value);
        take(&mut p.m);
        take(&mut p.v);
    }
    Ok(())
}

pub fn save_bundle(path: &Path, bundle: &ModelBundle) -> Result<(), NetworksError> {
    write_checkpoint(
        path,
        "bundle",
        bundle.spec.fingerprints(),
        bundle.epoch,
        bundle.opt_g.t,
        bundle.opt_d.t,
        &bundle.all_params(),
    )
}

/// Restores parameters, optimizer state, and the epoch counter into a bundle
/// constructed from the same specs.
pub fn load_bundle(path: &Path, bundle: &mut ModelBundle) -> Result<(), NetworksError> {
    let (header, payload) = read_checkpoint(path)?;
    if header.kind != "bundle" {
        return Err(NetworksError::HeaderMismatch(format!(
            "expected a bundle checkpoint, found kind {}",
            header.kind
        )));
    }
    let expected = bundle.spec.fingerprints();
    if header.fingerprints != expected {
        return Err(NetworksError::HeaderMismatch(format!(
            "architecture fingerprints {:?} do not match the configured {:?}",
            header.fingerprints, expected
        )));
    }
    if header.opt_state_version != OPT_STATE_VERSION {
        return Err(NetworksError::HeaderMismatch(format!(
            "optimizer state version {} not supported",
            header.opt_state_version
        )));
    }
    restore_params(&payload, bundle.all_params_mut())?;
    bundle.epoch = header.epoch;
    bundle.opt_g.t = header.opt_g_t;
    bundle.opt_d.t = header.opt_d_t;
    Ok(())
}

pub fn save_psi(path: &Path, psi: &StrokeClassifier) -> Result<(), NetworksError> {
    let mut fp = BTreeMap::new();
    fp.insert("psi".to_string(), psi.spec.fingerprint());
    write_checkpoint(path, "psi", fp, 0, 0, 0, &psi.params())
}

pub fn load_psi(path: &Path, psi: &mut StrokeClassifier) -> Result<(), NetworksError> {
    let (header, payload) = read_checkpoint(path)?;
    if header.kind != "psi" {
        return Err(NetworksError::HeaderMismatch(format!(
            "expected a stroke-classifier checkpoint, found kind {}",
            header.kind
        )));
    }
    let expected = psi.spec.fingerprint();
    if header.fingerprints.get("psi") != Some(&expected) {
        return Err(NetworksError::HeaderMismatch(format!(
            "classifier fingerprint {:?} does not match the configured {expected}",
            header.fingerprints.get("psi")
        )));
    }
    restore_params(&payload, psi.params_mut())
}

/// Highest-epoch `epoch_NNN.ckpt` in a directory, if any.
pub fn latest_checkpoint(dir: &Path) -> Option<(PathBuf, usize)> {
    let mut best: Option<(PathBuf, usize)> = None;
    for entry in std::fs::read_dir(dir).ok()?.flatten() {
        let name = entry.file_name();
        let name = name.to_string_lossy();
        if let Some(num) = name
            .strip_prefix("epoch_")
            .and_then(|s| s.strip_suffix(".ckpt"))
        {
            if let Ok(epoch) = num.parse::<usize>() {
                if best.as_ref().map_or(true, |(_, e)| epoch > *e) {
                    best = Some((entry.path(), epoch));
                }
            }
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::networks::{BundleSpec, GeneratorSpec, ModelBundle};
    use crate::nn::param_digest;

    fn micro_bundle(seed: u64) -> ModelBundle {
        let spec = BundleSpec {
            generator: GeneratorSpec::micro(),
            discriminator: crate::networks::DiscriminatorSpec::micro(),
            stroke: crate::networks::StrokeClassifierSpec::micro(),
            perceptual: crate::networks::PerceptualSpec::micro(),
        };
        ModelBundle::new(spec, 0.5, 0.999, seed)
    }

    #[test]
    fn bundle_round_trips_bit_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("epoch_003.ckpt");
        let mut saved = micro_bundle(7);
        saved.epoch = 3;
        saved.opt_g.t = 41;
        saved.opt_d.t = 42;
        // Perturb some optimizer state so the moment round trip is exercised.
        saved.g.params_mut()[0].1.m.fill(0.125);
        saved.g.params_mut()[0].1.v.fill(0.5);
        save_bundle(&path, &saved).unwrap();

        let mut restored = micro_bundle(999); // different init, same specs
        assert_ne!(
            param_digest(&saved.all_params()),
            param_digest(&restored.all_params())
        );
        load_bundle(&path, &mut restored).unwrap();
        assert_eq!(
            param_digest(&saved.all_params()),
            param_digest(&restored.all_params())
        );
        assert_eq!(restored.epoch, 3);
        assert_eq!(restored.opt_g.t, 41);
        assert_eq!(restored.opt_d.t, 42);
        assert_eq!(restored.g.params()[0].1.m.iter().next(), Some(&0.125));
    }

    #[test]
    fn corrupted_payload_is_a_checksum_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("epoch_001.ckpt");
        let bundle = micro_bundle(8);
        save_bundle(&path, &bundle).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        let last = bytes.len() - 1;
        bytes[last] ^= 0xff;
        std::fs::write(&path, bytes).unwrap();
        let mut target = micro_bundle(8);
        assert!(matches!(
            load_bundle(&path, &mut target),
            Err(NetworksError::ChecksumMismatch(_))
        ));
    }

    #[test]
    fn wrong_architecture_is_a_header_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("epoch_001.ckpt");
        save_bundle(&path, &micro_bundle(9)).unwrap();
        let spec = BundleSpec {
            generator: GeneratorSpec {
                base_channels: 2,
                channel_cap: 2,
                ..GeneratorSpec::micro()
            },
            discriminator: crate::networks::DiscriminatorSpec::micro(),
            stroke: crate::networks::StrokeClassifierSpec::micro(),
            perceptual: crate::networks::PerceptualSpec::micro(),
        };
        let mut target = ModelBundle::new(spec, 0.5, 0.999, 9);
        assert!(matches!(
            load_bundle(&path, &mut target),
            Err(NetworksError::HeaderMismatch(_))
        ));
    }

    #[test]
    fn psi_checkpoint_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("psi.ckpt");
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(4);
        let psi = StrokeClassifier::new(crate::networks::StrokeClassifierSpec::micro(), &mut rng);
        save_psi(&path, &psi).unwrap();
        let mut rng2 = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(5);
        let mut other =
            StrokeClassifier::new(crate::networks::StrokeClassifierSpec::micro(), &mut rng2);
        load_psi(&path, &mut other).unwrap();
        assert_eq!(param_digest(&psi.params()), param_digest(&other.params()));
    }

    #[test]
    fn latest_checkpoint_picks_the_highest_epoch() {
        let dir = tempfile::tempdir().unwrap();
        for e in [1usize, 10, 3] {
            let bundle = micro_bundle(e as u64);
            save_bundle(&dir.path().join(format!("epoch_{e:03}.ckpt")), &bundle).unwrap();
        }
        std::fs::write(dir.path().join("notes.txt"), "x").unwrap();
        let (path, epoch) = latest_checkpoint(dir.path()).unwrap();
        assert_eq!(epoch, 10);
        assert!(path.ends_with("epoch_010.ckpt"));
    }
}
