//! The line-drawing operator `F` and pseudo-pair construction.
//!
//! `F` maps both photos and sketches into a shared line-drawing domain:
//! mostly white background with dark strokes along strong intensity edges.
//! The default operator is an extended difference-of-Gaussians edge detector;
//! the enum is the plug-in point for a learned synthesizer.
//!
//! Pseudo pairs `(z, y)` with `z = F(y)` are what make supervised training of
//! the sketch generator possible without real photo-sketch pairs. Each pair
//! records the operator fingerprint so stale data is detectable.

use std::path::{Path, PathBuf};

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::imaging::{DomainTag, Image};

#[derive(Debug, Error)]
pub enum LineDrawError {
    #[error("unknown line-drawing operator: {0}")]
    UnknownOperator(String),
    #[error("expected a sketch image, got {0:?}")]
    WrongDomainTag(DomainTag),
    #[error("bad operator parameter: {0}")]
    BadParameter(String),
    #[error("pair manifest: {0}")]
    Manifest(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// The operator `F`. `DogDefault` is the built-in edge extractor; `External`
/// names pre-rendered line drawings on disk (one file per source image).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LineDrawingOperator {
    DogDefault { sigma: f64, k: f64, threshold: f64 },
    External { name: String },
}

impl Default for LineDrawingOperator {
    fn default() -> Self {
        Self::DogDefault {
            sigma: 1.0,
            k: 1.6,
            threshold: 0.005,
        }
    }
}

impl LineDrawingOperator {
    pub fn dog(sigma: f64, k: f64, threshold: f64) -> Result<Self, LineDrawError> {
        if sigma <= 0.0 {
            return Err(LineDrawError::BadParameter(format!("sigma {sigma} <= 0")));
        }
        if k <= 1.0 {
            return Err(LineDrawError::BadParameter(format!("k {k} <= 1")));
        }
        if !(0.0..1.0).contains(&threshold) || threshold == 0.0 {
            return Err(LineDrawError::BadParameter(format!(
                "threshold {threshold} outside (0, 1)"
            )));
        }
        Ok(Self::DogDefault { sigma, k, threshold })
    }

    /// Stable identity of the operator and its parameters. Stored in every
    /// pair manifest record so mismatched data fails loudly.
    pub fn fingerprint(&self) -> String {
        let canon = match self {
            Self::DogDefault { sigma, k, threshold } => {
                format!("dog_default:sigma={sigma}:k={k}:threshold={threshold}")
            }
            Self::External { name } => format!("external:{name}"),
        };
        let digest = Sha256::digest(canon.as_bytes());
        hex::encode(&digest[..8])
    }
}

/// Truncated Gaussian taps, normalized to sum 1. Radius is `ceil(3 sigma)`.
fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as i64;
    let mut taps: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i as f64).powi(2) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = taps.iter().sum();
    for t in &mut taps {
        *t /= sum;
    }
    taps
}

/// Separable Gaussian blur with replicated (clamped) borders.
fn gaussian_blur(plane: &Array2<f64>, sigma: f64) -> Array2<f64> {
    let taps = gaussian_kernel(sigma);
    let radius = (taps.len() / 2) as i64;
    let (h, w) = plane.dim();
    let mut rows = Array2::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (j, t) in taps.iter().enumerate() {
                let xx = (x as i64 + j as i64 - radius).clamp(0, w as i64 - 1) as usize;
                acc += t * plane[[y, xx]];
            }
            rows[[y, x]] = acc;
        }
    }
    let mut out = Array2::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (j, t) in taps.iter().enumerate() {
                let yy = (y as i64 + j as i64 - radius).clamp(0, h as i64 - 1) as usize;
                acc += t * rows[[yy, x]];
            }
            out[[y, x]] = acc;
        }
    }
    out
}

/// Maps the difference-of-Gaussians response to intensity: white where the
/// response magnitude stays at or below `threshold`, black from `2*threshold`
/// up, smooth-stepped in between.
fn dog_tone(d: f64, threshold: f64) -> f64 {
    let t = ((d.abs() - threshold) / threshold).clamp(0.0, 1.0);
    1.0 - (3.0 * t * t - 2.0 * t * t * t)
}

/// Applies `F` to an image of any domain, producing a grayscale line drawing
/// of identical spatial size.
pub fn line_draw(op: &LineDrawingOperator, image: &Image) -> Result<Image, LineDrawError> {
    match op {
        LineDrawingOperator::DogDefault { sigma, k, threshold } => {
            let luma = image.to_luma();
            let plane = luma
                .pixels()
                .index_axis(ndarray::Axis(0), 0)
                .to_owned();
            let narrow = gaussian_blur(&plane, *sigma);
            let wide = gaussian_blur(&plane, k * sigma);
            let (h, w) = plane.dim();
            let mut out = Array3::zeros((1, h, w));
            for y in 0..h {
                for x in 0..w {
                    out[[0, y, x]] = dog_tone(narrow[[y, x]] - wide[[y, x]], *threshold);
                }
            }
            Ok(Image::new(out, DomainTag::LineDrawing)
                .expect("tone map output stays in [0,1]"))
        }
        LineDrawingOperator::External { name } => Err(LineDrawError::UnknownOperator(format!(
            "external operator '{name}' supplies files, it cannot be applied in-process"
        ))),
    }
}

/// A supervised training pair manufactured from one unpaired sketch.
#[derive(Debug, Clone)]
pub struct PseudoPair {
    pub z: Image,
    pub y: Image,
    pub source_id: String,
    pub operator_fingerprint: String,
}

/// Runs `F` over a sketch collection, order preserved.
pub fn build_pseudo_pairs(
    op: &LineDrawingOperator,
    sketches: &[(String, Image)],
) -> Result<Vec<PseudoPair>, LineDrawError> {
    let fingerprint = op.fingerprint();
    sketches
        .iter()
        .map(|(id, y)| {
            if y.domain() != DomainTag::Sketch {
                return Err(LineDrawError::WrongDomainTag(y.domain()));
            }
            let z = line_draw(op, y)?;
            Ok(PseudoPair {
                z,
                y: y.clone(),
                source_id: id.clone(),
                operator_fingerprint: fingerprint.clone(),
            })
        })
        .collect()
}

/// One line of the JSON-lines pair manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairRecord {
    pub source_id: String,
    pub sketch_path: PathBuf,
    pub line_path: PathBuf,
    pub operator_fingerprint: String,
}

/// Writes a pair manifest as JSON lines, one record per pair.
pub fn write_pair_manifest(records: &[PairRecord], path: &Path) -> Result<(), LineDrawError> {
    let mut text = String::new();
    for r in records {
        text.push_str(&serde_json::to_string(r).map_err(|e| LineDrawError::Manifest(e.to_string()))?);
        text.push('\n');
    }
    std::fs::write(path, text)?;
    Ok(())
}

/// Reads a pair manifest, insisting every record carries the same operator
/// fingerprint.
pub fn read_pair_manifest(path: &Path) -> Result<Vec<PairRecord>, LineDrawError> {
    let text = std::fs::read_to_string(path)?;
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: PairRecord = serde_json::from_str(line)
            .map_err(|e| LineDrawError::Manifest(format!("line {}: {e}", i + 1)))?;
        records.push(record);
    }
    if let Some(first) = records.first() {
        let fp = &first.operator_fingerprint;
        if let Some(bad) = records.iter().find(|r| &r.operator_fingerprint != fp) {
            return Err(LineDrawError::Manifest(format!(
                "mixed operator fingerprints: {} vs {} (source {})",
                fp, bad.operator_fingerprint, bad.source_id
            )));
        }
    }
    Ok(records)
}

/// Loads the images behind a manifest into in-memory pairs, verifying the
/// fingerprint against the configured operator.
pub fn load_pairs(
    records: &[PairRecord],
    expected_fingerprint: &str,
) -> Result<Vec<PseudoPair>, LineDrawError> {
    records
        .iter()
        .map(|r| {
            if r.operator_fingerprint != expected_fingerprint {
                return Err(LineDrawError::Manifest(format!(
                    "pair {} was built with operator {}, expected {}",
                    r.source_id, r.operator_fingerprint, expected_fingerprint
                )));
            }
            let y = crate::imaging::read_png(&r.sketch_path, DomainTag::Sketch)
                .map_err(|e| LineDrawError::Manifest(format!("{}: {e}", r.sketch_path.display())))?;
            let z = crate::imaging::read_png(&r.line_path, DomainTag::LineDrawing)
                .map_err(|e| LineDrawError::Manifest(format!("{}: {e}", r.line_path.display())))?;
            Ok(PseudoPair {
                z,
                y,
                source_id: r.source_id.clone(),
                operator_fingerprint: r.operator_fingerprint.clone(),
            })
        })
        .collect()
}
