//! Frechet distance between two Gaussian fits. The matrix square root runs
//! through symmetric eigendecompositions only: with `A = sqrt(S1)`, the
//! trace of `sqrt(S1 S2)` equals the trace of `sqrt(A S2 A)`, and `A S2 A`
//! is symmetric positive semidefinite.

use nalgebra::{DMatrix, DVector};

use super::EvalError;

/// Diagonal added to both covariances before the square root; keeps nearly
/// singular fits (few patches, correlated features) numerically stable.
const JITTER: f64 = 1e-6;

/// Frechet distance between Gaussian fits of two feature sets. Rows are
/// feature vectors of a common dimension. Covariances are the unbiased
/// sample estimates (zero for single-element sets), negative eigenvalues
/// from roundoff are clamped, and the result is clamped at zero.
pub fn fid(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64, EvalError> {
    let d = check_features(a, b)?;
    let (mu_a, cov_a) = gaussian_fit(a, d);
    let (mu_b, cov_b) = gaussian_fit(b, d);

    let mean_gap = (&mu_a - &mu_b).norm_squared();
    let sqrt_a = sym_sqrt(&cov_a);
    // tr sqrt(S1 S2) with S1, S2 psd equals the trace square root of the
    // symmetrized product A S2 A.
    let inner = &sqrt_a * &cov_b * &sqrt_a;
    let tr_sqrt: f64 = sym_eigenvalues(&inner)
        .iter()
        .map(|&l| l.max(0.0).sqrt())
        .sum();
    let val = mean_gap + cov_a.trace() + cov_b.trace() - 2.0 * tr_sqrt;
    Ok(val.max(0.0))
}

fn check_features(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<usize, EvalError> {
    if a.is_empty() || b.is_empty() {
        return Err(EvalError::EmptySet("a feature set is empty".into()));
    }
    let d = a[0].len();
    for v in a.iter().chain(b.iter()) {
        if v.len() != d {
            return Err(EvalError::DimensionMismatch { a: d, b: v.len() });
        }
    }
    if d == 0 {
        return Err(EvalError::EmptySet("features have dimension zero".into()));
    }
    Ok(d)
}

fn gaussian_fit(set: &[Vec<f64>], d: usize) -> (DVector<f64>, DMatrix<f64>) {
    let n = set.len();
    let mut mu = DVector::zeros(d);
    for v in set {
        for (i, &x) in v.iter().enumerate() {
            mu[i] += x;
        }
    }
    mu /= n as f64;
    let mut cov = DMatrix::zeros(d, d);
    if n > 1 {
        for v in set {
            let c = DVector::from_iterator(d, v.iter().copied()) - &mu;
            cov += &c * c.transpose();
        }
        cov /= (n - 1) as f64;
    }
    for i in 0..d {
        cov[(i, i)] += JITTER;
    }
    (mu, cov)
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

fn sym_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    symmetrize(m)
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .copied()
        .collect()
}

fn sym_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = symmetrize(m).symmetric_eigen();
    let sqrt_vals =
        DVector::from_iterator(eig.eigenvalues.len(), eig.eigenvalues.iter().map(|&l| l.max(0.0).sqrt()));
    &eig.eigenvectors * DMatrix::from_diagonal(&sqrt_vals) * eig.eigenvectors.transpose()
}
