//! Training losses: the two-scale adversarial terms, discriminator feature
//! matching, perceptual reconstruction, the stroke loss, and their weighted
//! combination.
//!
//! Conventions, fixed across every term here:
//! - the scalar a discriminator assigns to a pair is the mean of its sigmoid
//!   patch grid, and the half-scale discriminator always sees inputs passed
//!   through the 2x mean downsampler;
//! - logs are clamped below at `ln(LOG_EPS)` so saturated discriminators
//!   cannot produce infinities;
//! - every activation-gap term is the un-squared L2 norm divided by its
//!   element count, which keeps the loss weights meaningful across image
//!   sizes;
//! - batch entries are scored independently and averaged.
//!
//! The pure functions here only measure. The `*_backward` entry points fuse
//! measurement with gradient accumulation for the training loop, treating
//! every network except their `&mut` argument as frozen.

use ndarray::{Axis, s};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::networks::{Discriminator, Generator, Perceptual, StrokeClassifier};
use crate::nn::{
    concat_channels, downsample2x_backward, downsample2x_forward, split_channels, NnError,
    Tensor,
};

/// Floor for every logarithm argument.
pub const LOG_EPS: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum LossError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("negative loss weight: {0}")]
    NegativeWeight(String),
    #[error("stroke classifier must be frozen before the stroke loss is used")]
    PsiNotFrozen,
}

impl From<NnError> for LossError {
    fn from(e: NnError) -> Self {
        LossError::ShapeMismatch(e.to_string())
    }
}

/// Combination weights of the full objective. The defaults are the published
/// operating point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_fm: f64,
    pub lambda_rec: f64,
    pub lambda_str: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_fm: 100.0,
            lambda_rec: 10.0,
            lambda_str: 0.002,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), LossError> {
        for (name, v) in [
            ("lambda_fm", self.lambda_fm),
            ("lambda_rec", self.lambda_rec),
            ("lambda_str", self.lambda_str),
        ] {
            if !(v >= 0.0) {
                return Err(LossError::NegativeWeight(format!("{name} = {v}")));
            }
        }
        Ok(())
    }
}

/// Every loss measured during one optimization step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossBreakdown {
    pub adv_d: f64,
    pub adv_g: f64,
    pub fm: f64,
    pub rec: f64,
    pub stroke: f64,
    pub total_g: f64,
}

fn clamped_ln(v: f64) -> f64 {
    v.max(LOG_EPS).ln()
}

fn check_same(what: &str, a: &Tensor, b: &Tensor) -> Result<(), LossError> {
    if a.dim() != b.dim() {
        return Err(LossError::ShapeMismatch(format!(
            "{what}: {:?} vs {:?}",
            a.dim(),
            b.dim()
        )));
    }
    Ok(())
}

fn check_even(what: &str, t: &Tensor) -> Result<(), LossError> {
    let (_, _, h, w) = t.dim();
    if h % 2 != 0 || w % 2 != 0 {
        return Err(LossError::ShapeMismatch(format!(
            "{what} must have even sides for the half-scale discriminator, got {h}x{w}"
        )));
    }
    Ok(())
}

/// Mean of each sample's score grid: the per-sample scalar `D_k(z, y)`.
fn per_sample_scores(grid: &Tensor) -> Vec<f64> {
    let n = grid.dim().0;
    let cnt = (grid.len() / n) as f64;
    (0..n)
        .map(|i| grid.index_axis(Axis(0), i).sum() / cnt)
        .collect()
}

/// Per-sample `||a - b||_2 / element_count`.
fn per_sample_gaps(a: &Tensor, b: &Tensor) -> Vec<f64> {
    let n = a.dim().0;
    let cnt = (a.len() / n) as f64;
    (0..n)
        .map(|i| {
            let ai = a.index_axis(Axis(0), i);
            let bi = b.index_axis(Axis(0), i);
            let ss: f64 = ai
                .iter()
                .zip(bi.iter())
                .map(|(x, y)| (x - y) * (x - y))
                .sum();
            ss.sqrt() / cnt
        })
        .collect()
}

/// Gradient of the per-sample gap terms with respect to `a`, with an outer
/// per-sample coefficient already folded in: `coeff_i * (a_i - b_i) /
/// (||a_i - b_i||_2 * cnt)`. Zero where the gap vanishes.
fn gap_gradient(a: &Tensor, b: &Tensor, coeff: &[f64]) -> Tensor {
    let n = a.dim().0;
    let cnt = (a.len() / n) as f64;
    let gaps = per_sample_gaps(a, b);
    let mut out = a - b;
    for i in 0..n {
        // gap = norm / cnt, so norm = gap * cnt.
        let norm = gaps[i] * cnt;
        let f = if norm > 0.0 { coeff[i] / (norm * cnt) } else { 0.0 };
        out.index_axis_mut(Axis(0), i).mapv_inplace(|v| v * f);
    }
    out
}

fn downscale_pair(z: &Tensor, y: &Tensor) -> (Tensor, Tensor) {
    (downsample2x_forward(z), downsample2x_forward(y))
}

/// Discriminator objective over both scales, negated for minimization:
/// `-sum_k [ln D_k(z, y_real) + ln(1 - D_k(z, y_fake))]`, batch-averaged.
pub fn adv_loss_d(
    d1: &Discriminator,
    d2: &Discriminator,
    z: &Tensor,
    y_real: &Tensor,
    y_fake: &Tensor,
) -> Result<f64, LossError> {
    check_same("real vs fake", y_real, y_fake)?;
    check_even("adversarial input", z)?;
    let n = z.dim().0 as f64;
    let (z2, yr2) = downscale_pair(z, y_real);
    let yf2 = downsample2x_forward(y_fake);
    let mut loss = 0.0;
    for (d, zz, yr, yf) in [(d1, z, y_real, y_fake), (d2, &z2, &yr2, &yf2)] {
        let sr = per_sample_scores(&d.forward(&concat_channels(zz, yr))?);
        let sf = per_sample_scores(&d.forward(&concat_channels(zz, yf))?);
        for (r, f) in sr.iter().zip(sf.iter()) {
            loss -= clamped_ln(*r) + clamped_ln(1.0 - *f);
        }
    }
    Ok(loss / n)
}

/// Non-saturating generator adversarial term: `-sum_k ln D_k(z, y_fake)`,
/// batch-averaged.
pub fn adv_loss_g(
    d1: &Discriminator,
    d2: &Discriminator,
    z: &Tensor,
    y_fake: &Tensor,
) -> Result<f64, LossError> {
    check_even("adversarial input", z)?;
    let n = z.dim().0 as f64;
    let (z2, yf2) = downscale_pair(z, y_fake);
    let mut loss = 0.0;
    for (d, zz, yf) in [(d1, z, y_fake), (d2, &z2, &yf2)] {
        for s in per_sample_scores(&d.forward(&concat_channels(zz, yf))?) {
            loss -= clamped_ln(s);
        }
    }
    Ok(loss / n)
}

/// Feature matching: activation gaps at every discriminator layer, both
/// scales, real branch treated as a constant.
pub fn fm_loss(
    d1: &Discriminator,
    d2: &Discriminator,
    z: &Tensor,
    y_real: &Tensor,
    y_fake: &Tensor,
) -> Result<f64, LossError> {
    check_same("real vs fake", y_real, y_fake)?;
    check_even("feature matching input", z)?;
    let n = z.dim().0 as f64;
    let (z2, yr2) = downscale_pair(z, y_real);
    let yf2 = downsample2x_forward(y_fake);
    let mut loss = 0.0;
    for (d, zz, yr, yf) in [(d1, z, y_real, y_fake), (d2, &z2, &yr2, &yf2)] {
        let ar = d.forward_features(&concat_channels(zz, yr))?;
        let af = d.forward_features(&concat_channels(zz, yf))?;
        for (r, f) in ar.iter().zip(af.iter()) {
            loss += per_sample_gaps(f, r).iter().sum::<f64>();
        }
    }
    Ok(loss / n)
}

/// Perceptual reconstruction: activation gaps at every tapped depth of the
/// frozen extractor.
pub fn rec_loss(phi: &Perceptual, y_real: &Tensor, y_fake: &Tensor) -> Result<f64, LossError> {
    check_same("real vs fake", y_real, y_fake)?;
    let n = y_real.dim().0 as f64;
    let fr = phi.features(y_real)?;
    let ff = phi.features(y_fake)?;
    let mut loss = 0.0;
    for (r, f) in fr.iter().zip(ff.iter()) {
        loss += per_sample_gaps(f, r).iter().sum::<f64>();
    }
    Ok(loss / n)
}

/// Top-left anchored non-overlapping tiling; trailing remainders that do not
/// fill a whole patch are ignored.
fn tile_offsets(side: usize, patch: usize) -> impl Iterator<Item = usize> {
    (0..side / patch).map(move |i| i * patch)
}

fn tile(t: &Tensor, i: usize, oy: usize, ox: usize, p: usize) -> Tensor {
    t.slice(s![i..i + 1, .., oy..oy + p, ox..ox + p]).to_owned()
}

/// Stroke loss: activation gaps at the classifier's two tapped layers,
/// summed over a regular grid of patches.
pub fn stroke_loss(
    psi: &StrokeClassifier,
    psi_frozen: bool,
    y_real: &Tensor,
    y_fake: &Tensor,
) -> Result<f64, LossError> {
    if !psi_frozen {
        return Err(LossError::PsiNotFrozen);
    }
    check_same("real vs fake", y_real, y_fake)?;
    let (n, _, h, w) = y_real.dim();
    let p = psi.spec.patch_size;
    if h < p || w < p {
        return Err(LossError::ShapeMismatch(format!(
            "image {h}x{w} smaller than the {p}-pixel stroke patch"
        )));
    }
    let mut loss = 0.0;
    for i in 0..n {
        for oy in tile_offsets(h, p) {
            for ox in tile_offsets(w, p) {
                let fr = psi.features(&tile(y_real, i, oy, ox, p))?;
                let ff = psi.features(&tile(y_fake, i, oy, ox, p))?;
                for (r, f) in fr.iter().zip(ff.iter()) {
                    loss += per_sample_gaps(f, r)[0];
                }
            }
        }
    }
    Ok(loss / n as f64)
}

/// Weighted combination of the generator-facing terms.
pub fn total_g_loss(
    adv_g: f64,
    fm: f64,
    rec: f64,
    stroke: f64,
    w: &LossWeights,
) -> Result<f64, LossError> {
    w.validate()?;
    Ok(adv_g + w.lambda_fm * fm + w.lambda_rec * rec + w.lambda_str * stroke)
}

/// One discriminator update's gradients: accumulates into `d1`/`d2` and
/// returns the measured loss. `y_fake` is a constant here (already detached
/// by being plain data).
pub fn discriminator_backward(
    d1: &mut Discriminator,
    d2: &mut Discriminator,
    z: &Tensor,
    y_real: &Tensor,
    y_fake: &Tensor,
) -> Result<f64, LossError> {
    check_same("real vs fake", y_real, y_fake)?;
    check_even("adversarial input", z)?;
    let n = z.dim().0;
    let (z2, yr2) = downscale_pair(z, y_real);
    let yf2 = downsample2x_forward(y_fake);
    let mut loss = 0.0;
    for (d, zz, yr, yf) in [
        (&mut *d1, z, y_real, y_fake),
        (&mut *d2, &z2, &yr2, &yf2),
    ] {
        let n_layers = d.n_layers();
        for (input, is_real) in [(concat_channels(zz, yr), true), (concat_channels(zz, yf), false)]
        {
            let (acts, cache) = d.forward_features_t(&input)?;
            let grid = acts.last().expect("nonempty");
            let scores = per_sample_scores(grid);
            let cnt = (grid.len() / n) as f64;
            let mut dgrid = Tensor::zeros(grid.raw_dim());
            for (i, &s) in scores.iter().enumerate() {
                let (term, ds) = if is_real {
                    // -ln(max(s, eps)): zero slope in the clamped region.
                    (-clamped_ln(s), if s > LOG_EPS { -1.0 / s } else { 0.0 })
                } else {
                    (
                        -clamped_ln(1.0 - s),
                        if 1.0 - s > LOG_EPS { 1.0 / (1.0 - s) } else { 0.0 },
                    )
                };
                loss += term;
                let g = ds / (cnt * n as f64);
                dgrid.index_axis_mut(Axis(0), i).fill(g);
            }
            let mut dacts: Vec<Tensor> =
                acts.iter().map(|a| Tensor::zeros(a.raw_dim())).collect();
            dacts[n_layers - 1] = dgrid;
            d.backward(&cache, &dacts);
        }
    }
    Ok(loss / n as f64)
}

/// Per-term coefficients for the generator backward pass. The full objective
/// uses `(1, lambda_fm, lambda_rec, lambda_str)`; gradient checks isolate a
/// single term by zeroing the others.
#[derive(Debug, Clone, Copy)]
pub struct GTermWeights {
    pub adv: f64,
    pub fm: f64,
    pub rec: f64,
    pub stroke: f64,
}

impl GTermWeights {
    pub fn from_loss_weights(w: &LossWeights) -> Self {
        Self {
            adv: 1.0,
            fm: w.lambda_fm,
            rec: w.lambda_rec,
            stroke: w.lambda_str,
        }
    }
}

/// Unweighted values of the four generator-facing terms measured during one
/// backward pass.
#[derive(Debug, Clone, Copy)]
pub struct GeneratorTerms {
    pub adv_g: f64,
    pub fm: f64,
    pub rec: f64,
    pub stroke: f64,
}

/// Accumulates `d(total)/d(G params)` for `total = tw.adv * adv_g + tw.fm *
/// fm + tw.rec * rec + tw.stroke * stroke` into the generator, treating the
/// discriminators and both extractors as frozen. Returns the measured
/// unweighted terms. Terms with a zero coefficient are still measured (the
/// training log wants them) but contribute no gradient.
pub fn generator_backward(
    g: &mut Generator,
    d1: &Discriminator,
    d2: &Discriminator,
    phi: &Perceptual,
    psi: &StrokeClassifier,
    psi_frozen: bool,
    z: &Tensor,
    y_real: &Tensor,
    tw: &GTermWeights,
) -> Result<GeneratorTerms, LossError> {
    check_even("adversarial input", z)?;
    let n = z.dim().0;
    let nf = n as f64;
    let (y_fake, gcache) = g.forward_t(z)?;
    check_same("real vs generated", y_real, &y_fake)?;
    let mut dy_fake = Tensor::zeros(y_fake.raw_dim());

    // Adversarial and feature-matching terms, both scales.
    let z2 = downsample2x_forward(z);
    let yr2 = downsample2x_forward(y_real);
    let yf2 = downsample2x_forward(&y_fake);
    let mut adv_g = 0.0;
    let mut fm = 0.0;
    let y_channels = y_fake.dim().1;
    for (scale, (d, zz, yr, yf)) in [
        (0usize, (d1, z, y_real, &y_fake)),
        (1usize, (d2, &z2, &yr2, &yf2)),
    ] {
        let acts_r = d.forward_features(&concat_channels(zz, yr))?;
        let (acts_f, cache_f) = d.forward_features_t(&concat_channels(zz, yf))?;
        let mut dacts: Vec<Tensor> = acts_f
            .iter()
            .map(|a| Tensor::zeros(a.raw_dim()))
            .collect();
        // Feature matching at every layer, the patch grid included.
        for (l, (af, ar)) in acts_f.iter().zip(acts_r.iter()).enumerate() {
            let gaps = per_sample_gaps(af, ar);
            fm += gaps.iter().sum::<f64>() / nf;
            if tw.fm != 0.0 {
                let coeff: Vec<f64> = gaps.iter().map(|_| tw.fm / nf).collect();
                dacts[l] = dacts[l].clone() + gap_gradient(af, ar, &coeff);
            }
        }
        // Non-saturating adversarial term on the grid.
        let grid = acts_f.last().expect("nonempty");
        let scores = per_sample_scores(grid);
        let cnt = (grid.len() / n) as f64;
        let last = dacts.len() - 1;
        for (i, &s) in scores.iter().enumerate() {
            adv_g -= clamped_ln(s) / nf;
            if tw.adv != 0.0 && s > LOG_EPS {
                let gval = tw.adv * (-1.0 / s) / (cnt * nf);
                dacts[last]
                    .index_axis_mut(Axis(0), i)
                    .mapv_inplace(|v| v + gval);
            }
        }
        if tw.adv != 0.0 || tw.fm != 0.0 {
            let dinput = d.backward_data(&cache_f, &dacts);
            let (_, dyf) = split_channels(&dinput, dinput.dim().1 - y_channels);
            if scale == 0 {
                dy_fake += &dyf;
            } else {
                dy_fake += &downsample2x_backward(&dyf);
            }
        }
    }

    // Perceptual reconstruction.
    let mut rec = 0.0;
    {
        let fr = phi.features(y_real)?;
        let (ff, cache) = phi.features_t(&y_fake)?;
        let mut dfeats: Vec<Tensor> =
            ff.iter().map(|a| Tensor::zeros(a.raw_dim())).collect();
        for (l, (f, r)) in ff.iter().zip(fr.iter()).enumerate() {
            let gaps = per_sample_gaps(f, r);
            rec += gaps.iter().sum::<f64>() / nf;
            if tw.rec != 0.0 {
                let coeff: Vec<f64> = gaps.iter().map(|_| tw.rec / nf).collect();
                dfeats[l] = dfeats[l].clone() + gap_gradient(f, r, &coeff);
            }
        }
        if tw.rec != 0.0 {
            dy_fake += &phi.backward_data(&cache, &dfeats);
        }
    }

    // Stroke loss over the patch grid.
    let mut stroke = 0.0;
    if tw.stroke != 0.0 && !psi_frozen {
        return Err(LossError::PsiNotFrozen);
    }
    {
        let (_, _, h, w) = y_fake.dim();
        let p = psi.spec.patch_size;
        if h < p || w < p {
            return Err(LossError::ShapeMismatch(format!(
                "image {h}x{w} smaller than the {p}-pixel stroke patch"
            )));
        }
        for i in 0..n {
            for oy in tile_offsets(h, p) {
                for ox in tile_offsets(w, p) {
                    let tr = tile(y_real, i, oy, ox, p);
                    let tf = tile(&y_fake, i, oy, ox, p);
                    let fr = psi.features(&tr)?;
                    let (ff, cache) = psi.features_t(&tf)?;
                    let mut dtaps: Vec<Tensor> = Vec::with_capacity(2);
                    for (f, r) in ff.iter().zip(fr.iter()) {
                        stroke += per_sample_gaps(f, r)[0] / nf;
                        dtaps.push(if tw.stroke != 0.0 {
                            gap_gradient(f, r, &[tw.stroke / nf])
                        } else {
                            Tensor::zeros(f.raw_dim())
                        });
                    }
                    if tw.stroke != 0.0 {
                        let dtile = psi.backward_features_data(&cache, &dtaps[0], &dtaps[1]);
                        let mut slot =
                            dy_fake.slice_mut(s![i..i + 1, .., oy..oy + p, ox..ox + p]);
                        slot += &dtile;
                    }
                }
            }
        }
    }

    g.backward(&gcache, &dy_fake);
    Ok(GeneratorTerms {
        adv_g,
        fm,
        rec,
        stroke,
    })
}
