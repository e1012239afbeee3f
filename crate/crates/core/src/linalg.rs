//! Small dense linear-algebra helpers shared by the modules.

use alloc::vec::Vec;
use nalgebra::{DMatrix, SymmetricEigen};

/// Absolute tolerance used for symmetry checks on model inputs.
pub const SYMMETRY_TOL: f64 = 1e-12;

/// Replaces `m` by `(m + m')/2` in place.
pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

pub fn symmetrized(mut m: DMatrix<f64>) -> DMatrix<f64> {
    symmetrize(&mut m);
    m
}

pub fn is_square(m: &DMatrix<f64>) -> bool {
    m.nrows() == m.ncols()
}

/// Largest absolute asymmetry `|m_ij - m_ji|`, scaled by `max(1, max|m|)`.
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    let scale = m.amax().max(1.0);
    let mut worst: f64 = 0.0;
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst / scale
}

pub fn is_symmetric(m: &DMatrix<f64>, tol: f64) -> bool {
    is_square(m) && asymmetry(m) <= tol
}

/// Eigenvalues of a symmetric matrix sorted in descending order.
pub fn sorted_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let eig = SymmetricEigen::new(m.clone());
    let mut vals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    vals.sort_by(|a, b| b.total_cmp(a));
    vals
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    sorted_eigenvalues(m).last().copied().unwrap_or(0.0)
}

/// Symmetric and positive semi-definite up to `tol` (relative to the
/// largest entry) on the smallest eigenvalue.
pub fn is_psd(m: &DMatrix<f64>, tol: f64) -> bool {
    if !is_symmetric(m, SYMMETRY_TOL) {
        return false;
    }
    if m.is_empty() {
        return true;
    }
    let scale = m.amax().max(1.0);
    min_eigenvalue(&symmetrized(m.clone())) >= -tol * scale
}

/// Symmetric positive definite, decided by a Cholesky factorization.
pub fn is_pd(m: &DMatrix<f64>) -> bool {
    is_symmetric(m, SYMMETRY_TOL) && m.clone().cholesky().is_some()
}

/// Inverse of a symmetric positive-definite matrix; falls back to LU for
/// matrices that are invertible but fail Cholesky by round-off.
pub fn spd_inverse(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    match m.clone().cholesky() {
        Some(ch) => Some(symmetrized(ch.inverse())),
        None => m.clone().try_inverse().map(symmetrized),
    }
}

/// Symmetric square root of a PSD matrix via eigendecomposition. Tiny
/// negative eigenvalues from round-off are clipped to zero, so singular
/// covariances are admissible.
pub fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(symmetrized(m.clone()));
    let roots = eig.eigenvalues.map(|v| libm::sqrt(v.max(0.0)));
    let v = &eig.eigenvectors;
    symmetrized(v * DMatrix::from_diagonal(&roots) * v.transpose())
}

/// Numerical rank from singular values, with the usual
/// `max(r, c) * eps * sigma_max` threshold.
pub fn rank(m: &DMatrix<f64>) -> usize {
    if m.is_empty() {
        return 0;
    }
    let sv = m.clone().svd(false, false).singular_values;
    let smax = sv.iter().copied().fold(0.0, f64::max);
    if smax == 0.0 {
        return 0;
    }
    let tol = (m.nrows().max(m.ncols()) as f64) * f64::EPSILON * smax;
    sv.iter().filter(|&&s| s > tol).count()
}

/// `[B, AB, A^2 B, ..., A^{m-1} B]`.
pub fn controllability_matrix(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let m = a.nrows();
    let mut blocks = Vec::with_capacity(m);
    let mut cur = b.clone();
    for _ in 0..m {
        blocks.push(cur.clone());
        cur = a * cur;
    }
    hstack(&blocks)
}

/// `[C; CA; CA^2; ...; CA^{m-1}]`.
pub fn observability_matrix(a: &DMatrix<f64>, c: &DMatrix<f64>) -> DMatrix<f64> {
    controllability_matrix(&a.transpose(), &c.transpose()).transpose()
}

pub fn hstack(blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let rows = blocks.first().map_or(0, |b| b.nrows());
    let cols = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut c0 = 0;
    for b in blocks {
        out.view_mut((0, c0), (rows, b.ncols())).copy_from(b);
        c0 += b.ncols();
    }
    out
}

pub fn block_diag(blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let rows = blocks.iter().map(|b| b.nrows()).sum();
    let cols = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let (mut r0, mut c0) = (0, 0);
    for b in blocks {
        out.view_mut((r0, c0), b.shape()).copy_from(b);
        r0 += b.nrows();
        c0 += b.ncols();
    }
    out
}

pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a.kronecker(b)
}

pub fn trace(m: &DMatrix<f64>) -> f64 {
    m.trace()
}
