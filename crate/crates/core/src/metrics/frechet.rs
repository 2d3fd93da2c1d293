use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Shrinkage weight applied when a set has fewer than `dim + 1` samples.
pub const SHRINKAGE: f64 = 0.01;
/// Negative eigenvalues above `-EIGEN_TOLERANCE` are treated as round-off.
pub const EIGEN_TOLERANCE: f64 = 1e-8;

/// Sample mean and unbiased covariance, shrunk towards a scaled identity
/// when the set is too small for a full-rank estimate.
pub fn gaussian_fit(feats: &[Vec<f64>]) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = feats.len();
    if n < 2 {
        return Err(Error::invalid(format!("need at least two feature vectors, got {n}")));
    }
    let k = feats[0].len();
    if k == 0 || feats.iter().any(|f| f.len() != k) {
        return Err(Error::invalid("feature vectors must share a positive dimension"));
    }
    let x = DMatrix::from_fn(n, k, |i, j| feats[i][j]);
    let mean = DVector::from_fn(k, |j, _| x.column(j).sum() / n as f64);
    let centred = DMatrix::from_fn(n, k, |i, j| x[(i, j)] - mean[j]);
    let mut cov = centred.transpose() * &centred / (n - 1) as f64;
    if n < k + 1 {
        let scale = cov.trace() / k as f64;
        cov = cov * (1.0 - SHRINKAGE) + DMatrix::identity(k, k) * (SHRINKAGE * scale);
    }
    Ok((mean, cov))
}

fn sqrt_psd(m: &DMatrix<f64>) -> (DMatrix<f64>, usize) {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let mut clamped = 0;
    let roots = eig.eigenvalues.map(|l| {
        if l < -EIGEN_TOLERANCE {
            clamped += 1;
        }
        l.max(0.0).sqrt()
    });
    let v = &eig.eigenvectors;
    (v * DMatrix::from_diagonal(&roots) * v.transpose(), clamped)
}

/// Fréchet distance between Gaussians fitted to two feature sets:
/// `|mu_a - mu_b|^2 + Tr(S_a + S_b - 2 (S_a S_b)^(1/2))`.
///
/// The trace of `(S_a S_b)^(1/2)` is taken from the eigenvalues of the
/// symmetric `S_a^(1/2) S_b S_a^(1/2)`, which has the same spectrum.
pub fn frechet_distance(feats_a: &[Vec<f64>], feats_b: &[Vec<f64>]) -> Result<f64> {
    let (ma, sa) = gaussian_fit(feats_a)?;
    let (mb, sb) = gaussian_fit(feats_b)?;
    if ma.len() != mb.len() {
        return Err(Error::ShapeMismatch {
            expected: vec![ma.len()],
            actual: vec![mb.len()],
        });
    }
    let (root_a, c1) = sqrt_psd(&sa);
    let inner = &root_a * &sb * &root_a;
    let sym = (&inner + inner.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let mut clamped = c1;
    let tr_cross: f64 = eig
        .eigenvalues
        .iter()
        .map(|&l| {
            if l < -EIGEN_TOLERANCE {
                clamped += 1;
            }
            l.max(0.0).sqrt()
        })
        .sum();
    if clamped > 0 {
        log::warn!("frechet distance: clamped {clamped} negative eigenvalue(s)");
    }
    let d = (&ma - &mb).norm_squared() + sa.trace() + sb.trace() - 2.0 * tr_cross;
    if d < 0.0 {
        log::debug!("frechet distance: clamped {d:e} to zero");
    }
    Ok(d.max(0.0))
}
