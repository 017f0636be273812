//! The four networks and their packaging: generator `G`, the two patch
//! discriminators, the stroke classifier `psi`, the frozen perceptual
//! extractor `phi`, plus checkpoint serialization for the whole bundle.

mod checkpoint;
mod discriminator;
mod generator;
mod perceptual;
mod stroke;

pub use checkpoint::{latest_checkpoint, load_bundle, load_psi, save_bundle, save_psi,
    CheckpointHeader};
pub use discriminator::{Discriminator, DiscriminatorCache, DiscriminatorSpec};
pub use generator::{Generator, GeneratorCache, GeneratorSpec, ResBlock};
pub(crate) use generator::fingerprint_str;
pub use perceptual::{Perceptual, PerceptualCache, PerceptualSpec, PHI_WEIGHT_SEED};
pub use stroke::{StrokeClassifier, StrokeClassifierSpec, StrokeFeatureCache,
    StrokeForwardCache, StrokeLabel};

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imaging::{DomainTag, Image};
use crate::nn::{concat_channels, Adam, NnError, ParamRefs, ParamRefsMut, Tensor};

#[derive(Debug, Error)]
pub enum NetworksError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("checksum mismatch: {0}")]
    ChecksumMismatch(String),
    #[error("checkpoint header mismatch: {0}")]
    HeaderMismatch(String),
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Architecture choice for every network in a bundle; fingerprints of this
/// are what a checkpoint is validated against.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BundleSpec {
    pub generator: GeneratorSpec,
    pub discriminator: DiscriminatorSpec,
    pub stroke: StrokeClassifierSpec,
    pub perceptual: PerceptualSpec,
}

impl BundleSpec {
    /// Conditional channels: the discriminators see `z` and the judged image
    /// concatenated.
    pub fn for_profile(g: GeneratorSpec, d_base: usize) -> Self {
        let d_in = g.in_channels + g.out_channels;
        Self {
            discriminator: DiscriminatorSpec {
                in_channels: d_in,
                base_channels: d_base,
                n_layers: 5,
                kernel: 4,
            },
            stroke: StrokeClassifierSpec::default(),
            perceptual: PerceptualSpec::bundled(g.out_channels),
            generator: g,
        }
    }

    pub fn fingerprints(&self) -> std::collections::BTreeMap<String, String> {
        let mut m = std::collections::BTreeMap::new();
        m.insert("g".into(), self.generator.fingerprint());
        m.insert("d".into(), self.discriminator.fingerprint());
        m.insert("psi".into(), self.stroke.fingerprint());
        m.insert("phi".into(), self.perceptual.fingerprint());
        m
    }
}

/// Everything the training loop mutates or reads: the three trainable
/// networks with their optimizer states, the frozen extractors, and the
/// epoch counter. `phi` never changes after construction; `psi` must not
/// change while `psi_frozen` is set (the stroke loss refuses otherwise).
pub struct ModelBundle {
    pub spec: BundleSpec,
    pub g: Generator,
    pub d1: Discriminator,
    pub d2: Discriminator,
    pub psi: StrokeClassifier,
    pub psi_frozen: bool,
    pub phi: Perceptual,
    pub opt_g: Adam,
    pub opt_d: Adam,
    pub epoch: usize,
}

impl ModelBundle {
    pub fn new(spec: BundleSpec, beta1: f64, beta2: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = Generator::new(spec.generator.clone(), &mut rng);
        let d1 = Discriminator::new(spec.discriminator.clone(), &mut rng);
        let d2 = Discriminator::new(spec.discriminator.clone(), &mut rng);
        let psi = StrokeClassifier::new(spec.stroke.clone(), &mut rng);
        let phi = Perceptual::new(spec.perceptual.clone());
        Self {
            spec,
            g,
            d1,
            d2,
            psi,
            psi_frozen: true,
            phi,
            opt_g: Adam::new(beta1, beta2),
            opt_d: Adam::new(beta1, beta2),
            epoch: 0,
        }
    }

    /// Installs a pretrained stroke classifier; it stays frozen from here on.
    pub fn set_psi(&mut self, psi: StrokeClassifier) {
        assert_eq!(
            psi.spec.fingerprint(),
            self.spec.stroke.fingerprint(),
            "stroke classifier spec must match the bundle"
        );
        self.psi = psi;
        self.psi_frozen = true;
    }

    /// Checkpoint parameter walk, in a fixed order.
    pub fn all_params(&self) -> ParamRefs<'_> {
        let mut out = self.g.params();
        out.extend(self.d1.params("d1"));
        out.extend(self.d2.params("d2"));
        out.extend(self.psi.params());
        out.extend(self.phi.params());
        out
    }

    pub(crate) fn all_params_mut(&mut self) -> ParamRefsMut<'_> {
        let mut out = self.g.params_mut();
        out.extend(self.d1.params_mut("d1"));
        out.extend(self.d2.params_mut("d2"));
        out.extend(self.psi.params_mut());
        // phi is frozen: loading its stored values back is a no-op by the
        // construction-determinism of Perceptual, but keeping it in the walk
        // keeps save and load layouts trivially aligned. Perceptual exposes
        // no public mutable access; only this walk reaches in.
        out.extend(self.phi.params_mut_for_checkpoint());
        out
    }
}

/// Applies the generator to a line drawing, producing a sketch-tagged image
/// of the same size.
pub fn generator_forward(g: &Generator, z: &Image) -> Result<Image, NetworksError> {
    let y = g.forward(&z.to_batch())?;
    Image::from_batch(&y, DomainTag::Sketch)
        .map_err(|e| NetworksError::Nn(NnError::BadShape(e.to_string())))
}

/// Scores a (condition, image) pair; returns the patch grid. The scalar
/// `D_k(z, img)` is this grid's mean. For the half-scale discriminator both
/// inputs must already be downsampled.
pub fn discriminator_forward(
    d: &Discriminator,
    z: &Image,
    img: &Image,
) -> Result<Array2<f64>, NetworksError> {
    if z.height() != img.height() || z.width() != img.width() {
        return Err(NetworksError::Nn(NnError::ShapeMismatch(format!(
            "condition {}x{} vs image {}x{}",
            z.height(),
            z.width(),
            img.height(),
            img.width()
        ))));
    }
    let grid = d.forward(&concat_channels(&z.to_batch(), &img.to_batch()))?;
    let (_, _, gh, gw) = grid.dim();
    Ok(Array2::from_shape_fn((gh, gw), |(y, x)| grid[[0, 0, y, x]]))
}

/// Class probabilities for one patch: seven nonnegative entries summing to 1.
pub fn stroke_classifier_forward(
    psi: &StrokeClassifier,
    patch: &Image,
) -> Result<Array1<f64>, NetworksError> {
    let probs = psi.forward_probs(&patch.to_batch())?;
    Ok(probs.row(0).to_owned())
}

/// Frozen activation grids at the four tapped depths.
pub fn perceptual_features(phi: &Perceptual, image: &Image) -> Result<Vec<Tensor>, NetworksError> {
    Ok(phi.features(&image.to_batch())?)
}
