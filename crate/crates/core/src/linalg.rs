//! Small dense-matrix helpers shared by the filter, smoother and diagnostics.

use nalgebra::{Cholesky, DMatrix, Dyn};

/// Default eigenvalue floor for covariance repair: `1e-10·max(1, Tr(P)/n)`.
pub fn default_floor(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows().max(1) as f64;
    1e-10 * (m.trace() / n).max(1.0)
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn cholesky(m: &DMatrix<f64>) -> Option<Cholesky<f64, Dyn>> {
    m.clone().cholesky()
}

/// Cholesky factorization, retrying with a growing diagonal jitter.
pub fn cholesky_with_jitter(m: &DMatrix<f64>) -> Option<Cholesky<f64, Dyn>> {
    if let Some(c) = cholesky(m) {
        return Some(c);
    }
    let n = m.nrows();
    let mut jitter = default_floor(m);
    for _ in 0..6 {
        let shifted = m + DMatrix::identity(n, n) * jitter;
        if let Some(c) = shifted.cholesky() {
            return Some(c);
        }
        jitter *= 100.0;
    }
    None
}

/// A square root `S` with `S Sᵀ = m` for symmetric positive semi-definite
/// input. Lower Cholesky factor when it exists, otherwise the eigen square
/// root with negative round-off clipped. `None` if `m` is clearly indefinite.
pub fn psd_sqrt(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    if let Some(c) = cholesky(m) {
        return Some(c.l());
    }
    let sym = symmetrize(m);
    let eig = sym.symmetric_eigen();
    let scale = eig.eigenvalues.amax().max(1.0);
    if eig.eigenvalues.min() < -1e-9 * scale {
        return None;
    }
    let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    let mut s = eig.eigenvectors;
    for (j, r) in roots.iter().enumerate() {
        s.column_mut(j).scale_mut(*r);
    }
    Some(s)
}
