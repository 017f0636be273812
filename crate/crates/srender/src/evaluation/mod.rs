//! Inference and evaluation: the end-to-end path `G(F(x))`, patch sampling,
//! a fixed-weight feature embedder, patch-level Frechet distance, a block
//! structure/texture similarity, Fisherface identification accuracy, and the
//! stroke-loss ablation harness.
//!
//! The Frechet embedder here is a small fixed-weight network, so distances
//! are internally comparable across runs of this code base but not
//! comparable to numbers computed with the standard large pretrained
//! embedder.

mod ablation;
mod fid;
mod fisherface;
mod scoot;

pub use ablation::{run_ablation, AblationRow};
pub use fid::fid;
pub use fisherface::fisherface_acc;
pub use scoot::scoot;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imaging::Image;
use crate::linedraw::{line_draw, LineDrawError, LineDrawingOperator};
use crate::networks::{generator_forward, ModelBundle, NetworksError, Perceptual, PerceptualSpec};
use crate::nn::NnError;
use crate::training::TrainError;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("bad shape: {0}")]
    BadShape(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("feature dimension mismatch: {a} vs {b}")]
    DimensionMismatch { a: usize, b: usize },
    #[error("empty set: {0}")]
    EmptySet(String),
    #[error("patch size {patch} exceeds image side {side}")]
    PatchTooLarge { patch: usize, side: usize },
    #[error("need at least 2 identities, got {0}")]
    TooFewIdentities(usize),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("probe id {0} absent from the gallery")]
    UnknownProbeId(String),
    #[error(transparent)]
    LineDraw(#[from] LineDrawError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

impl From<NnError> for EvalError {
    fn from(e: NnError) -> Self {
        EvalError::BadShape(e.to_string())
    }
}

impl From<NetworksError> for EvalError {
    fn from(e: NetworksError) -> Self {
        EvalError::BadShape(e.to_string())
    }
}

/// How evaluation patches are drawn. The published protocol uses about
/// 10,000 patches of 256 pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchSampleConfig {
    pub n_patches: usize,
    pub patch_size: usize,
    pub seed: u64,
}

impl Default for PatchSampleConfig {
    fn default() -> Self {
        Self {
            n_patches: 10_000,
            patch_size: 256,
            seed: 0,
        }
    }
}

impl PatchSampleConfig {
    pub fn fingerprint(&self) -> String {
        crate::networks::fingerprint_str(&format!(
            "patches:{}:{}:{}",
            self.n_patches, self.patch_size, self.seed
        ))
    }
}

/// The full inference path: `line = F(x)`, `sketch = G(line)`. Both halves
/// are returned for inspection. Running it on a real sketch reconstructs it.
pub fn infer(
    bundle: &ModelBundle,
    op: &LineDrawingOperator,
    x: &Image,
) -> Result<(Image, Image), EvalError> {
    let line = line_draw(op, x)?;
    let sketch = generator_forward(&bundle.g, &line)?;
    Ok((line, sketch))
}

/// Draws `n_patches` square crops uniformly over (image, offset),
/// deterministic for a seed.
pub fn sample_patches(images: &[Image], cfg: &PatchSampleConfig) -> Result<Vec<Image>, EvalError> {
    if images.is_empty() {
        return Err(EvalError::EmptySet("no images to sample from".into()));
    }
    let p = cfg.patch_size;
    for img in images {
        let side = img.height().min(img.width());
        if side < p {
            return Err(EvalError::PatchTooLarge { patch: p, side });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = Vec::with_capacity(cfg.n_patches);
    for _ in 0..cfg.n_patches {
        let img = &images[rng.gen_range(0..images.len())];
        let oy = rng.gen_range(0..=img.height() - p);
        let ox = rng.gen_range(0..=img.width() - p);
        let window = img
            .pixels()
            .slice(ndarray::s![.., oy..oy + p, ox..ox + p])
            .to_owned();
        out.push(Image::new(window, img.domain()).expect("window of a valid image"));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbedderKind {
    /// The bundled fixed-weight convolutional embedder.
    BundledFixed,
    /// Features were computed outside this crate; only the dimension and
    /// fingerprint travel through reports.
    External,
}

/// Deterministic frozen feature extractor behind the Frechet metric: the
/// fixed-weight perceptual stack pooled to one vector per image.
pub struct FeatureEmbedder {
    kind: EmbedderKind,
    net: Option<Perceptual>,
    dim: usize,
    fingerprint: String,
}

impl FeatureEmbedder {
    pub fn bundled_fixed(in_channels: usize) -> Self {
        let spec = PerceptualSpec::bundled(in_channels);
        let dim = spec.channels[3];
        let fingerprint =
            crate::networks::fingerprint_str(&format!("embedder:bundled:{}", spec.fingerprint()));
        Self {
            kind: EmbedderKind::BundledFixed,
            net: Some(Perceptual::new(spec)),
            dim,
            fingerprint,
        }
    }

    /// Marker for externally supplied features.
    pub fn external(dim: usize, label: &str) -> Self {
        Self {
            kind: EmbedderKind::External,
            net: None,
            dim,
            fingerprint: crate::networks::fingerprint_str(&format!("embedder:external:{label}:{dim}")),
        }
    }

    pub fn kind(&self) -> EmbedderKind {
        self.kind
    }

    pub fn output_dim(&self) -> usize {
        self.dim
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    /// Deepest feature map, globally average-pooled.
    pub fn embed(&self, img: &Image) -> Result<Vec<f64>, EvalError> {
        let net = self.net.as_ref().ok_or_else(|| {
            EvalError::EmptySet("external embedder holds no network; supply features directly".into())
        })?;
        let feats = net.features(&img.to_batch())?;
        let deepest = feats.last().expect("four taps");
        let (_, c, h, w) = deepest.dim();
        let mut v = vec![0.0; c];
        for (ci, slot) in v.iter_mut().enumerate() {
            *slot = deepest
                .slice(ndarray::s![0, ci, .., ..])
                .sum()
                / (h * w) as f64;
        }
        Ok(v)
    }

    /// Embeds a patch set, warning when it is too small for a
    /// well-conditioned covariance.
    pub fn embed_all(&self, imgs: &[Image]) -> Result<Vec<Vec<f64>>, EvalError> {
        if imgs.len() < 2 * self.dim {
            log::warn!(
                "{} patches for a {}-dimensional embedding; covariance may be ill-conditioned",
                imgs.len(),
                self.dim
            );
        }
        imgs.iter().map(|i| self.embed(i)).collect()
    }
}

/// Identification protocol for generated sketches: the gallery holds every
/// real image twice, as-is and mirrored, labeled by source id; the generated
/// images are the probes. Two views per id keep the Fisher basis
/// well-posed when each identity has a single real sketch. Returns `None`
/// when fewer than two identities are present.
pub fn identity_match_acc(
    reals: &[(Image, String)],
    fakes: &[(Image, String)],
) -> Result<Option<f64>, EvalError> {
    let ids: std::collections::BTreeSet<&str> =
        reals.iter().map(|(_, id)| id.as_str()).collect();
    if ids.len() < 2 {
        return Ok(None);
    }
    let mut gallery = Vec::with_capacity(2 * reals.len());
    for (img, id) in reals {
        gallery.push((img.clone(), id.clone()));
        gallery.push((mirror(img), id.clone()));
    }
    Ok(Some(fisherface_acc(&gallery, fakes)?))
}

pub(crate) fn mirror(img: &Image) -> Image {
    let flipped = img.pixels().slice(ndarray::s![.., .., ..;-1]).to_owned();
    Image::new(flipped, img.domain()).expect("mirror of a valid image")
}

/// One evaluation's numbers together with everything needed to reproduce
/// them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub fid: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scoot: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub acc: Option<f64>,
    pub sample_config: PatchSampleConfig,
    pub embedder_fingerprint: String,
}
