//! Unpaired face sketch synthesis through a line-drawing bridge.
//!
//! Photos and sketches are mapped into a shared line-drawing domain by a
//! pluggable operator `F`; the resulting pseudo pairs `(F(y), y)` supervise a
//! conditional generator `G`, so a photo `x` becomes a sketch via `G(F(x))`.
//! Training combines an adversarial term over two image scales with
//! discriminator feature matching, perceptual reconstruction, and a stroke
//! loss computed through a frozen patch classifier. Evaluation covers
//! patch-level Frechet distance, a block structure/texture similarity, and
//! Fisherface identification accuracy.
//!
//! Module map:
//! - [`imaging`]: image type, alignment, augmentation, down-sampling, PNG and
//!   landmark I/O.
//! - [`linedraw`]: the line-drawing operator and pseudo-pair construction.
//! - [`nn`]: the small deterministic f64 tensor/layer substrate with explicit
//!   forward caches and hand-written backward passes.
//! - [`networks`]: generator, multi-scale discriminators, stroke classifier,
//!   perceptual extractor, checkpointing.
//! - [`losses`]: the four training losses and the combined objective.
//! - [`training`]: stroke-classifier pretraining and the alternating GAN loop.
//! - [`evaluation`]: inference, patch sampling, FID, Scoot, Fisherface.
//! - [`config`] / [`manifest`] / [`cli`]: run configuration and provenance.

pub mod cli;
pub mod config;
pub mod evaluation;
pub mod imaging;
pub mod linedraw;
pub mod losses;
pub mod manifest;
pub mod networks;
pub mod nn;
pub mod training;

pub use evaluation::MetricsReport;
pub use manifest::RunManifest;
pub use imaging::{AugmentConfig, DomainTag, Image, Landmarks};
pub use linedraw::{LineDrawingOperator, PseudoPair};
pub use losses::{LossBreakdown, LossWeights};
pub use networks::ModelBundle;
pub use training::TrainConfig;
