//! The alternating GAN loop: one discriminator update then one generator
//! update per step, epoch shuffling and pair-synchronized augmentation from
//! per-epoch random streams, periodic checkpoints, and a CSV loss log.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use ndarray::Axis;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::imaging::{apply_augment, AugmentSample};
use crate::linedraw::PseudoPair;
use crate::losses::{
    discriminator_backward, generator_backward, total_g_loss, GTermWeights, GeneratorTerms,
    LossBreakdown, LossWeights,
};
use crate::networks::{
    latest_checkpoint, load_bundle, save_bundle, ModelBundle, StrokeClassifier,
};
use crate::nn::Tensor;

use super::{lr_at, TrainConfig, TrainError};

const LOG_NAME: &str = "loss_log.csv";
const LOG_HEADER: &str = "epoch,step,adv_d,adv_g,fm,rec,stroke,total_g,lr";

/// One line of the training loss log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossLogRow {
    pub epoch: usize,
    pub step: usize,
    pub adv_d: f64,
    pub adv_g: f64,
    pub fm: f64,
    pub rec: f64,
    pub stroke: f64,
    pub total_g: f64,
    pub lr: f64,
}

fn stack_batch(batch: &[PseudoPair]) -> Result<(Tensor, Tensor), TrainError> {
    if batch.is_empty() {
        return Err(TrainError::BadConfig("empty batch".into()));
    }
    let (h, w) = (batch[0].z.height(), batch[0].z.width());
    for p in batch {
        if p.z.height() != h || p.z.width() != w || p.y.height() != h || p.y.width() != w {
            return Err(TrainError::BadConfig(format!(
                "pair {} does not match the batch size {h}x{w}",
                p.source_id
            )));
        }
    }
    let zs: Vec<Tensor> = batch.iter().map(|p| p.z.to_batch()).collect();
    let ys: Vec<Tensor> = batch.iter().map(|p| p.y.to_batch()).collect();
    let zv: Vec<_> = zs.iter().map(|t| t.view()).collect();
    let yv: Vec<_> = ys.iter().map(|t| t.view()).collect();
    let z = ndarray::concatenate(Axis(0), &zv).expect("shapes checked above");
    let y = ndarray::concatenate(Axis(0), &yv).expect("shapes checked above");
    Ok((z, y))
}

/// One discriminator update against the current generator; the generated
/// image enters as plain data, so no gradient reaches the generator.
pub fn d_step(
    bundle: &mut ModelBundle,
    z: &Tensor,
    y_real: &Tensor,
    lr: f64,
) -> Result<f64, TrainError> {
    let y_fake = bundle.g.forward(z)?;
    bundle.d1.zero_grad();
    bundle.d2.zero_grad();
    let adv_d = discriminator_backward(&mut bundle.d1, &mut bundle.d2, z, y_real, &y_fake)?;
    if !adv_d.is_finite() {
        return Err(TrainError::NonFiniteLoss(format!("adv_d = {adv_d}")));
    }
    let mut params = bundle.d1.params_mut("d1");
    params.extend(bundle.d2.params_mut("d2"));
    bundle.opt_d.step(params, lr);
    Ok(adv_d)
}

/// One generator update on the combined objective; discriminators and both
/// extractors stay fixed. Returns the unweighted terms and the total.
pub fn g_step(
    bundle: &mut ModelBundle,
    z: &Tensor,
    y_real: &Tensor,
    weights: &LossWeights,
    lr: f64,
) -> Result<(GeneratorTerms, f64), TrainError> {
    bundle.g.zero_grad();
    let tw = GTermWeights::from_loss_weights(weights);
    let terms = generator_backward(
        &mut bundle.g,
        &bundle.d1,
        &bundle.d2,
        &bundle.phi,
        &bundle.psi,
        bundle.psi_frozen,
        z,
        y_real,
        &tw,
    )?;
    let total = total_g_loss(terms.adv_g, terms.fm, terms.rec, terms.stroke, weights)?;
    if !total.is_finite() {
        return Err(TrainError::NonFiniteLoss(format!(
            "total_g = {total} (adv_g = {}, fm = {}, rec = {}, stroke = {})",
            terms.adv_g, terms.fm, terms.rec, terms.stroke
        )));
    }
    bundle.opt_g.step(bundle.g.params_mut(), lr);
    Ok((terms, total))
}

/// One full optimization step: discriminators first on the detached fake,
/// then the generator on the combined objective. The learning rate is
/// `lr_at` for the epoch after `bundle.epoch` completed ones.
pub fn train_step(
    bundle: &mut ModelBundle,
    batch: &[PseudoPair],
    cfg: &TrainConfig,
) -> Result<LossBreakdown, TrainError> {
    let (z, y) = stack_batch(batch)?;
    let lr = lr_at(bundle.epoch + 1, cfg)?;
    let adv_d = d_step(bundle, &z, &y, lr)?;
    let (terms, total_g) = g_step(bundle, &z, &y, &cfg.weights, lr)?;
    Ok(LossBreakdown {
        adv_d,
        adv_g: terms.adv_g,
        fm: terms.fm,
        rec: terms.rec,
        stroke: terms.stroke,
        total_g,
    })
}

fn format_row(r: &LossLogRow) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{}",
        r.epoch, r.step, r.adv_d, r.adv_g, r.fm, r.rec, r.stroke, r.total_g, r.lr
    )
}

/// Parses a loss log written by [`train`].
pub fn read_loss_log(path: &Path) -> Result<Vec<LossLogRow>, TrainError> {
    let text = fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 {
            if line != LOG_HEADER {
                return Err(TrainError::BadConfig(format!(
                    "unexpected loss log header: {line}"
                )));
            }
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 9 {
            return Err(TrainError::BadConfig(format!(
                "loss log line {} has {} columns",
                i + 1,
                cols.len()
            )));
        }
        let f = |s: &str| -> Result<f64, TrainError> {
            s.parse()
                .map_err(|e| TrainError::BadConfig(format!("loss log line {}: {e}", i + 1)))
        };
        rows.push(LossLogRow {
            epoch: cols[0]
                .parse()
                .map_err(|e| TrainError::BadConfig(format!("loss log line {}: {e}", i + 1)))?,
            step: cols[1]
                .parse()
                .map_err(|e| TrainError::BadConfig(format!("loss log line {}: {e}", i + 1)))?,
            adv_d: f(cols[2])?,
            adv_g: f(cols[3])?,
            fm: f(cols[4])?,
            rec: f(cols[5])?,
            stroke: f(cols[6])?,
            total_g: f(cols[7])?,
            lr: f(cols[8])?,
        });
    }
    Ok(rows)
}

/// Drops log rows beyond the resumed epoch so a resumed run appends onto a
/// consistent prefix.
fn trim_log_for_resume(path: &Path, keep_through_epoch: usize) -> Result<(), TrainError> {
    if !path.exists() {
        fs::write(path, format!("{LOG_HEADER}\n"))?;
        return Ok(());
    }
    let rows = read_loss_log(path)?;
    let mut text = format!("{LOG_HEADER}\n");
    for r in rows.iter().filter(|r| r.epoch <= keep_through_epoch) {
        text.push_str(&format_row(r));
        text.push('\n');
    }
    fs::write(path, text)?;
    Ok(())
}

fn checkpoint_name(epoch: usize) -> String {
    format!("epoch_{epoch}.ckpt")
}

/// Trains a bundle on pseudo pairs.
///
/// A fresh run builds the bundle from the profile and installs `psi` (when
/// given) as the frozen stroke classifier. With `resume`, the latest
/// checkpoint in `checkpoint_dir` is restored instead and training continues
/// from the epoch after it; per-epoch random streams keyed by `(seed,
/// epoch)` make the continuation identical to an uninterrupted run. Without
/// `resume`, a directory that already holds checkpoints is refused.
pub fn train(
    pairs: &[PseudoPair],
    cfg: &TrainConfig,
    checkpoint_dir: &Path,
    psi: Option<StrokeClassifier>,
    resume: bool,
) -> Result<ModelBundle, TrainError> {
    cfg.validate()?;
    if pairs.is_empty() {
        return Err(TrainError::BadConfig("no training pairs".into()));
    }
    fs::create_dir_all(checkpoint_dir)?;

    let spec = cfg.profile.bundle_spec();
    let mut bundle = ModelBundle::new(spec.clone(), cfg.beta1, cfg.beta2, cfg.seed);
    if let Some(psi) = psi {
        if psi.spec.fingerprint() != spec.stroke.fingerprint() {
            return Err(TrainError::BadConfig(
                "stroke classifier does not match the profile's architecture".into(),
            ));
        }
        bundle.set_psi(psi);
    }

    let latest = latest_checkpoint(checkpoint_dir);
    if resume {
        if let Some((path, _)) = &latest {
            load_bundle(path, &mut bundle)?;
        }
    } else if latest.is_some() {
        return Err(TrainError::BadConfig(format!(
            "{} already holds checkpoints; pass resume or use a fresh directory",
            checkpoint_dir.display()
        )));
    }

    let log_path = checkpoint_dir.join(LOG_NAME);
    trim_log_for_resume(&log_path, bundle.epoch)?;
    let mut log = fs::OpenOptions::new().append(true).open(&log_path)?;

    let acfg = cfg.profile.augment_config();
    let total = cfg.total_epochs();
    let mut last_saved = None;
    for epoch in (bundle.epoch + 1)..=total {
        let lr = lr_at(epoch, cfg)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(epoch as u64);
        let mut order: Vec<usize> = (0..pairs.len()).collect();
        order.shuffle(&mut rng);
        for (step0, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let mut batch = Vec::with_capacity(chunk.len());
            for &i in chunk {
                // One draw per pair, applied to both halves.
                let sample = AugmentSample::draw(&acfg, &mut rng);
                batch.push(PseudoPair {
                    z: apply_augment(&pairs[i].z, &acfg, sample)?,
                    y: apply_augment(&pairs[i].y, &acfg, sample)?,
                    source_id: pairs[i].source_id.clone(),
                    operator_fingerprint: pairs[i].operator_fingerprint.clone(),
                });
            }
            let b = train_step(&mut bundle, &batch, cfg).map_err(|e| match e {
                TrainError::NonFiniteLoss(msg) => TrainError::NonFiniteLoss(format!(
                    "epoch {epoch} step {}: {msg}",
                    step0 + 1
                )),
                other => other,
            })?;
            let row = LossLogRow {
                epoch,
                step: step0 + 1,
                adv_d: b.adv_d,
                adv_g: b.adv_g,
                fm: b.fm,
                rec: b.rec,
                stroke: b.stroke,
                total_g: b.total_g,
                lr,
            };
            writeln!(log, "{}", format_row(&row))?;
        }
        log.flush()?;
        bundle.epoch = epoch;
        if epoch % cfg.checkpoint_every == 0 {
            save_bundle(&checkpoint_dir.join(checkpoint_name(epoch)), &bundle)?;
            last_saved = Some(epoch);
        }
    }
    if total > 0 && last_saved != Some(total) {
        save_bundle(&checkpoint_dir.join(checkpoint_name(total)), &bundle)?;
    }
    Ok(bundle)
}
