//! Stroke-loss ablation: trains the full objective and a `lambda_str = 0`
//! variant under the same seed and config, then scores both on a held-out
//! slice of the pairs. Every fifth pair (indices 0, 5, ...) is held out;
//! the rest train. Identification uses the real held-out sketches plus
//! their mirror images as the gallery and the generated sketches as probes,
//! labeled by source id.

use std::path::Path;

use rand::SeedableRng;

use crate::imaging::Image;
use crate::linedraw::PseudoPair;
use crate::networks::{generator_forward, load_psi, save_psi, StrokeClassifier};
use crate::training::{train, TrainConfig};

use super::{
    fid, identity_match_acc, sample_patches, scoot, EvalError, FeatureEmbedder, MetricsReport,
    PatchSampleConfig,
};

/// One trained variant with the exact config it ran under.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub config: TrainConfig,
    pub report: MetricsReport,
}

/// Trains `full` and `no_stroke` and evaluates both on the held-out pairs.
/// Checkpoints land in `out_dir/<variant>`. The two runs share seeds, data
/// split, and patch sampling, so the rows differ only through the stroke
/// weight.
pub fn run_ablation(
    pairs: &[PseudoPair],
    cfg: &TrainConfig,
    sample: &PatchSampleConfig,
    out_dir: &Path,
    psi: Option<&StrokeClassifier>,
) -> Result<Vec<AblationRow>, EvalError> {
    let (train_pairs, held) = split_pairs(pairs)?;
    std::fs::create_dir_all(out_dir)?;
    let psi_path = out_dir.join("psi.ckpt");
    if let Some(p) = psi {
        save_psi(&psi_path, p).map_err(crate::training::TrainError::from)?;
    }

    let mut rows = Vec::new();
    for variant in ["full", "no_stroke"] {
        let mut vcfg = cfg.clone();
        if variant == "no_stroke" {
            vcfg.weights.lambda_str = 0.0;
        }
        let vpsi = match psi {
            Some(p) => {
                let mut fresh = StrokeClassifier::new(
                    p.spec.clone(),
                    &mut rand_chacha::ChaCha8Rng::seed_from_u64(0),
                );
                load_psi(&psi_path, &mut fresh).map_err(crate::training::TrainError::from)?;
                Some(fresh)
            }
            None => None,
        };
        let bundle = train(&train_pairs, &vcfg, &out_dir.join(variant), vpsi, false)?;

        let mut reals = Vec::with_capacity(held.len());
        let mut fakes = Vec::with_capacity(held.len());
        for p in &held {
            reals.push(p.y.clone());
            fakes.push(generator_forward(&bundle.g, &p.z)?);
        }

        let embedder = FeatureEmbedder::bundled_fixed(bundle.spec.generator.out_channels);
        let real_feats = embedder.embed_all(&sample_patches(&reals, sample)?)?;
        let fake_feats = embedder.embed_all(&sample_patches(&fakes, sample)?)?;
        let fid_val = fid(&real_feats, &fake_feats)?;

        let mut scoot_sum = 0.0;
        for (r, f) in reals.iter().zip(fakes.iter()) {
            scoot_sum += scoot(r, f)?;
        }
        let scoot_val = scoot_sum / held.len() as f64;

        let real_labeled: Vec<(Image, String)> = held
            .iter()
            .map(|p| (p.y.clone(), p.source_id.clone()))
            .collect();
        let fake_labeled: Vec<(Image, String)> = fakes
            .iter()
            .zip(held.iter())
            .map(|(f, p)| (f.clone(), p.source_id.clone()))
            .collect();
        let acc = identity_match_acc(&real_labeled, &fake_labeled)?;

        rows.push(AblationRow {
            variant: variant.to_string(),
            config: vcfg,
            report: MetricsReport {
                fid: fid_val,
                scoot: Some(scoot_val),
                acc,
                sample_config: *sample,
                embedder_fingerprint: embedder.fingerprint().to_string(),
            },
        });
    }
    Ok(rows)
}

fn split_pairs(pairs: &[PseudoPair]) -> Result<(Vec<PseudoPair>, Vec<PseudoPair>), EvalError> {
    if pairs.len() < 2 {
        return Err(EvalError::Degenerate(format!(
            "ablation needs at least 2 pairs to split, got {}",
            pairs.len()
        )));
    }
    let mut train_pairs = Vec::new();
    let mut held = Vec::new();
    for (i, p) in pairs.iter().enumerate() {
        if i % 5 == 0 {
            held.push(p.clone());
        } else {
            train_pairs.push(p.clone());
        }
    }
    Ok((train_pairs, held))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::DomainTag;
    use crate::linedraw::{build_pseudo_pairs, LineDrawingOperator};
    use crate::losses::LossWeights;
    use crate::training::Profile;
    use ndarray::Array3;

    fn sketch(seed: usize) -> Image {
        Image::new(
            Array3::from_shape_fn((1, 64, 64), |(_, y, x)| {
                let v = ((y * (seed + 3) + x * (2 * seed + 1)) % 17) as f64 / 17.0;
                if (y / 8 + x / 8 + seed) % 2 == 0 {
                    v
                } else {
                    1.0 - v
                }
            }),
            DomainTag::Sketch,
        )
        .unwrap()
    }

    fn toy_cfg() -> TrainConfig {
        TrainConfig {
            epochs_const: 1,
            epochs_decay: 0,
            lr0: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            batch_size: 1,
            weights: LossWeights::default(),
            seed: 7,
            profile: Profile::Toy64,
            checkpoint_every: 10,
        }
    }

    #[test]
    fn rows_differ_only_in_the_stroke_weight_and_share_fingerprints() {
        let op = LineDrawingOperator::default();
        let sketches: Vec<(String, Image)> = (0..6)
            .map(|i| (format!("s{i}"), sketch(i)))
            .collect();
        let pairs = build_pseudo_pairs(&op, &sketches).unwrap();
        let cfg = toy_cfg();
        let sample = PatchSampleConfig {
            n_patches: 64,
            patch_size: 32,
            seed: cfg.seed,
        };
        let dir = tempfile::tempdir().unwrap();
        let rows = run_ablation(&pairs, &cfg, &sample, dir.path(), None).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].variant, "full");
        assert_eq!(rows[1].variant, "no_stroke");

        assert_eq!(rows[1].config.weights.lambda_str, 0.0);
        let mut full_zeroed = rows[0].config.clone();
        full_zeroed.weights.lambda_str = 0.0;
        assert_eq!(full_zeroed, rows[1].config);

        assert_eq!(
            rows[0].report.sample_config.fingerprint(),
            rows[1].report.sample_config.fingerprint()
        );
        assert_eq!(
            rows[0].report.embedder_fingerprint,
            rows[1].report.embedder_fingerprint
        );
        for row in &rows {
            assert!(row.report.fid.is_finite() && row.report.fid >= 0.0);
            let s = row.report.scoot.unwrap();
            assert!((0.0..=1.0).contains(&s));
            let a = row.report.acc.unwrap();
            assert!((0.0..=1.0).contains(&a));
        }
    }

    #[test]
    fn refuses_sets_too_small_to_split() {
        let op = LineDrawingOperator::default();
        let pairs = build_pseudo_pairs(&op, &[("only".into(), sketch(0))]).unwrap();
        let cfg = toy_cfg();
        let sample = PatchSampleConfig {
            n_patches: 8,
            patch_size: 16,
            seed: 0,
        };
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            run_ablation(&pairs, &cfg, &sample, dir.path(), None),
            Err(EvalError::Degenerate(_))
        ));
    }
}
