//! Stroke-classifier pretraining, the alternating GAN loop, the learning
//! rate schedule, and checkpointing.
//!
//! Training runs one discriminator update then one generator update per
//! step, batch size 1 by default so instance normalization stays well-posed.
//! Epoch-level randomness (shuffling, augmentation draws) comes from a
//! stream keyed by `(seed, epoch)`, which is what makes a resumed run
//! indistinguishable from an uninterrupted one.

mod gan;
mod pretrain;

pub use gan::{d_step, g_step, read_loss_log, train, train_step, LossLogRow};
pub use pretrain::{
    extract_stroke_patches, synthetic_stroke_patches, train_stroke_classifier, SemanticMask,
    StrokePatchDataset, BACKGROUND_ID,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imaging::{AugmentConfig, ImagingError};
use crate::losses::{LossError, LossWeights};
use crate::networks::{
    BundleSpec, DiscriminatorSpec, GeneratorSpec, NetworksError, PerceptualSpec,
    StrokeClassifierSpec,
};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("bad config: {0}")]
    BadConfig(String),
    #[error("degenerate dataset: {0}")]
    DegenerateDataset(String),
    #[error("epoch {epoch} outside the schedule 1..={total}")]
    EpochOutOfRange { epoch: usize, total: usize },
    #[error("non-finite loss: {0}")]
    NonFiniteLoss(String),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Nn(#[from] crate::nn::NnError),
    #[error(transparent)]
    Networks(#[from] NetworksError),
    #[error(transparent)]
    Imaging(#[from] ImagingError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// Input resolution and the network widths that go with it. The toy profile
/// keeps the full architecture shape at widths small enough for tests and
/// smoke runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Profile {
    #[serde(rename = "paper_512")]
    Paper512,
    #[serde(rename = "toy_64")]
    Toy64,
}

impl Profile {
    pub fn name(self) -> &'static str {
        match self {
            Profile::Paper512 => "paper_512",
            Profile::Toy64 => "toy_64",
        }
    }
}

impl std::fmt::Display for Profile {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Profile {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "paper_512" => Ok(Profile::Paper512),
            "toy_64" => Ok(Profile::Toy64),
            other => Err(format!(
                "unknown profile {other:?}; expected paper_512 or toy_64"
            )),
        }
    }
}

impl Profile {
    pub fn image_size(self) -> usize {
        match self {
            Profile::Paper512 => 512,
            Profile::Toy64 => 64,
        }
    }

    /// Scale-then-crop jitter plus horizontal flips, the usual aligned-face
    /// recipe. The resize target is about 6% above the crop.
    pub fn augment_config(self) -> AugmentConfig {
        let (resize_to, crop_to) = match self {
            Profile::Paper512 => (542, 512),
            Profile::Toy64 => (68, 64),
        };
        AugmentConfig {
            resize_to,
            crop_to,
            hflip_prob: 0.5,
            seed: 0,
        }
    }

    pub fn generator_spec(self) -> GeneratorSpec {
        match self {
            Profile::Paper512 => GeneratorSpec::paper(1, 1),
            Profile::Toy64 => GeneratorSpec::toy(1, 1),
        }
    }

    pub fn discriminator_spec(self) -> DiscriminatorSpec {
        // Conditioned on the line drawing: channels are z plus the image.
        match self {
            Profile::Paper512 => DiscriminatorSpec::paper(2),
            Profile::Toy64 => DiscriminatorSpec::toy(2),
        }
    }

    pub fn stroke_spec(self) -> StrokeClassifierSpec {
        match self {
            Profile::Paper512 => StrokeClassifierSpec::default(),
            Profile::Toy64 => StrokeClassifierSpec {
                patch_size: 32,
                in_channels: 1,
                stem_channels: 8,
                dense_layers: 2,
                growth: 8,
                out_channels: 16,
            },
        }
    }

    pub fn perceptual_spec(self) -> PerceptualSpec {
        PerceptualSpec::bundled(1)
    }

    pub fn bundle_spec(self) -> BundleSpec {
        BundleSpec {
            generator: self.generator_spec(),
            discriminator: self.discriminator_spec(),
            stroke: self.stroke_spec(),
            perceptual: self.perceptual_spec(),
        }
    }
}

/// Run-level knobs for both pretraining and the GAN loop.
///
/// For stroke-classifier pretraining the schedule fields are reinterpreted:
/// `epochs_const` is the number of passes over the patch set and `lr0` the
/// constant learning rate (the decay schedule is a GAN concern).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs_const: usize,
    pub epochs_decay: usize,
    pub lr0: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub batch_size: usize,
    pub weights: LossWeights,
    pub seed: u64,
    pub profile: Profile,
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs_const: 100,
            epochs_decay: 100,
            lr0: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            batch_size: 1,
            weights: LossWeights::default(),
            seed: 0,
            profile: Profile::Paper512,
            checkpoint_every: 10,
        }
    }
}

impl TrainConfig {
    pub fn total_epochs(&self) -> usize {
        self.epochs_const + self.epochs_decay
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.lr0 > 0.0) {
            return Err(TrainError::BadConfig(format!("lr0 must be > 0, got {}", self.lr0)));
        }
        if self.batch_size < 1 {
            return Err(TrainError::BadConfig("batch_size must be >= 1".into()));
        }
        if self.checkpoint_every < 1 {
            return Err(TrainError::BadConfig("checkpoint_every must be >= 1".into()));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(TrainError::BadConfig(format!("{name} must be in [0, 1), got {b}")));
            }
        }
        self.weights
            .validate()
            .map_err(|e| TrainError::BadConfig(e.to_string()))?;
        Ok(())
    }
}

/// Learning rate for a 1-based epoch: constant at `lr0` through
/// `epochs_const`, then linear to zero at the end of the schedule.
pub fn lr_at(epoch: usize, cfg: &TrainConfig) -> Result<f64, TrainError> {
    let total = cfg.total_epochs();
    if epoch < 1 || epoch > total {
        return Err(TrainError::EpochOutOfRange { epoch, total });
    }
    if epoch <= cfg.epochs_const {
        Ok(cfg.lr0)
    } else {
        let into = (epoch - cfg.epochs_const) as f64;
        Ok(cfg.lr0 * (1.0 - into / cfg.epochs_decay as f64))
    }
}
