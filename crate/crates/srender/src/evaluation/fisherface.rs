//! Fisherface identification: PCA to `n - c` dimensions through the Gram
//! matrix, multi-class LDA to `c - 1` through Cholesky whitening of the
//! within-class scatter, then nearest-neighbor matching. Inputs are flat
//! luma images; desk-scale galleries keep every matrix small.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{Cholesky, DMatrix, DVector};

use super::EvalError;
use crate::imaging::Image;

/// Relative eigenvalue cutoff below which a PCA direction is treated as
/// numerically null.
const RANK_TOL: f64 = 1e-10;

/// Fraction of probes whose nearest gallery neighbor in the Fisher space
/// shares their identity.
pub fn fisherface_acc(
    gallery: &[(Image, String)],
    probes: &[(Image, String)],
) -> Result<f64, EvalError> {
    if gallery.is_empty() {
        return Err(EvalError::EmptySet("gallery is empty".into()));
    }
    if probes.is_empty() {
        return Err(EvalError::EmptySet("probe set is empty".into()));
    }
    let ids: BTreeSet<&str> = gallery.iter().map(|(_, id)| id.as_str()).collect();
    let c = ids.len();
    if c < 2 {
        return Err(EvalError::TooFewIdentities(c));
    }
    for (_, id) in probes {
        if !ids.contains(id.as_str()) {
            return Err(EvalError::UnknownProbeId(id.clone()));
        }
    }
    let (h, w) = (gallery[0].0.height(), gallery[0].0.width());
    for (img, _) in gallery.iter().chain(probes.iter()) {
        if img.height() != h || img.width() != w {
            return Err(EvalError::ShapeMismatch(format!(
                "all images must be {h}x{w}, got {}x{}",
                img.height(),
                img.width()
            )));
        }
    }
    let n = gallery.len();
    if n <= c {
        return Err(EvalError::Degenerate(format!(
            "fisherface basis needs more gallery images than identities, got {n} images for {c} ids"
        )));
    }

    // Centered gallery matrix, one flattened luma image per row.
    let d = h * w;
    let mut x = DMatrix::zeros(n, d);
    for (i, (img, _)) in gallery.iter().enumerate() {
        fill_row(&mut x, i, img);
    }
    let mean = x.row_mean().transpose();
    for i in 0..n {
        for j in 0..d {
            x[(i, j)] -= mean[j];
        }
    }

    // PCA through the n x n Gram matrix; feature-space directions are
    // recovered as X^T v / sqrt(lambda).
    let eig = (&x * x.transpose()).symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let lmax = eig.eigenvalues[order[0]].max(0.0);
    let k = order
        .iter()
        .take(n - c)
        .filter(|&&i| eig.eigenvalues[i] > RANK_TOL * lmax && eig.eigenvalues[i] > 0.0)
        .count();
    if k == 0 {
        return Err(EvalError::Degenerate(
            "gallery has no variance to build a basis from".into(),
        ));
    }
    let mut basis = DMatrix::zeros(d, k);
    for (col, &i) in order.iter().take(k).enumerate() {
        let v = eig.eigenvectors.column(i);
        let u = x.transpose() * v / eig.eigenvalues[i].sqrt();
        basis.set_column(col, &u);
    }
    let gal_pca = &x * &basis; // n x k

    // Scatter matrices in the PCA space.
    let mut by_class: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, (_, id)) in gallery.iter().enumerate() {
        by_class.entry(id.as_str()).or_default().push(i);
    }
    let global = gal_pca.row_mean().transpose();
    let mut sw = DMatrix::zeros(k, k);
    let mut sb = DMatrix::zeros(k, k);
    for rows in by_class.values() {
        let mut cm = DVector::zeros(k);
        for &i in rows {
            cm += gal_pca.row(i).transpose();
        }
        cm /= rows.len() as f64;
        for &i in rows {
            let dvec = gal_pca.row(i).transpose() - &cm;
            sw += &dvec * dvec.transpose();
        }
        let gap = &cm - &global;
        sb += &gap * gap.transpose() * rows.len() as f64;
    }

    // Whiten Sw and diagonalize the between-class scatter there. The ridge
    // is relative to the scatter scale, which keeps the whole map invariant
    // to affine intensity rescaling.
    let mut eps = RANK_TOL * (sw.trace() + sb.trace()) / k as f64;
    if eps <= 0.0 {
        eps = 1e-12;
    }
    let chol = Cholesky::new(&sw + DMatrix::identity(k, k) * eps).ok_or_else(|| {
        EvalError::Degenerate("within-class scatter is not positive definite".into())
    })?;
    let l = chol.l();
    let a = l
        .solve_lower_triangular(&sb)
        .expect("triangular factor is invertible");
    let m_sym = {
        let b = l
            .solve_lower_triangular(&a.transpose())
            .expect("triangular factor is invertible");
        let bt = b.transpose();
        (&bt + bt.transpose()) * 0.5
    };
    let eig2 = m_sym.symmetric_eigen();
    let mut order2: Vec<usize> = (0..k).collect();
    order2.sort_by(|&i, &j| eig2.eigenvalues[j].total_cmp(&eig2.eigenvalues[i]));
    let m_dims = (c - 1).min(k);
    let lt = l.transpose();
    let mut fisher = DMatrix::zeros(k, m_dims);
    for (col, &i) in order2.iter().take(m_dims).enumerate() {
        let u = eig2.eigenvectors.column(i).into_owned();
        let wcol = lt
            .solve_upper_triangular(&u)
            .expect("triangular factor is invertible");
        fisher.set_column(col, &wcol);
    }

    let gal_feat = &gal_pca * &fisher; // n x m
    let mut correct = 0usize;
    for (img, id) in probes {
        let mut p = DVector::zeros(d);
        fill_vec(&mut p, img);
        p -= &mean;
        let feat = (basis.transpose() * p).transpose() * &fisher; // 1 x m
        let mut best = 0usize;
        let mut best_dist = f64::INFINITY;
        for i in 0..n {
            let dist = (gal_feat.row(i) - &feat).norm_squared();
            if dist < best_dist {
                best_dist = dist;
                best = i;
            }
        }
        if gallery[best].1 == *id {
            correct += 1;
        }
    }
    Ok(correct as f64 / probes.len() as f64)
}

fn fill_row(x: &mut DMatrix<f64>, row: usize, img: &Image) {
    let luma = img.to_luma();
    let p = luma.pixels();
    let w = img.width();
    for y in 0..img.height() {
        for xx in 0..w {
            x[(row, y * w + xx)] = p[[0, y, xx]];
        }
    }
}

fn fill_vec(v: &mut DVector<f64>, img: &Image) {
    let luma = img.to_luma();
    let p = luma.pixels();
    let w = img.width();
    for y in 0..img.height() {
        for xx in 0..w {
            v[y * w + xx] = p[[0, y, xx]];
        }
    }
}
