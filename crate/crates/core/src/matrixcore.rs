//! Dense real matrix kernel.
//!
//! Everything here works on `nalgebra::DMatrix<f64>`. Symmetric matrices are
//! plain dense matrices; the eigenvalue tests symmetrize before decomposing.

use nalgebra::{Complex, DMatrix, Schur, SymmetricEigen};

use crate::error::{Error, Result};

/// Dense real matrix.
pub type Mat = DMatrix<f64>;

/// Dense matrix that is symmetric up to [`SYM_TOL`] (relative).
pub type SymMat = DMatrix<f64>;

/// Relative asymmetry allowed before a matrix is rejected as non-symmetric.
pub const SYM_TOL: f64 = 1e-8;

/// Relative threshold (times `sigma_max`) for numerical rank.
pub const RANK_TOL: f64 = 1e-10;

/// `(S + S^T) / 2`.
pub fn symmetrize(s: &Mat) -> Mat {
    (s + s.transpose()) * 0.5
}

/// Largest absolute entry.
pub fn max_abs(a: &Mat) -> f64 {
    a.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

/// True if `S` is square and `||S - S^T||_max <= SYM_TOL * max(1, ||S||_max)`.
pub fn is_symmetric(s: &Mat) -> bool {
    s.is_square() && max_abs(&(s - s.transpose())) <= SYM_TOL * max_abs(s).max(1.0)
}

/// Eigenvalues of the symmetric part of `S`, ascending.
pub fn sym_eigenvalues(s: &Mat) -> Vec<f64> {
    if s.nrows() == 0 {
        return Vec::new();
    }
    let mut ev: Vec<f64> = SymmetricEigen::new(symmetrize(s)).eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| a.total_cmp(b));
    ev
}

pub fn lambda_min(s: &Mat) -> f64 {
    sym_eigenvalues(s).first().copied().unwrap_or(0.0)
}

pub fn lambda_max(s: &Mat) -> f64 {
    sym_eigenvalues(s).last().copied().unwrap_or(0.0)
}

/// `lambda_min(S) >= -tol`. Empty matrices are trivially PSD.
pub fn is_psd(s: &Mat, tol: f64) -> bool {
    s.nrows() == 0 || lambda_min(s) >= -tol
}

/// `lambda_max(S) <= tol`. Empty matrices are trivially NSD.
pub fn is_nsd(s: &Mat, tol: f64) -> bool {
    s.nrows() == 0 || lambda_max(s) <= tol
}

/// Singular values, descending.
pub fn singular_values(a: &Mat) -> Vec<f64> {
    if a.nrows() == 0 || a.ncols() == 0 {
        return Vec::new();
    }
    let mut sv: Vec<f64> = a.clone().svd(false, false).singular_values.iter().copied().collect();
    sv.sort_by(|x, y| y.total_cmp(x));
    sv
}

pub fn sigma_max(a: &Mat) -> f64 {
    singular_values(a).first().copied().unwrap_or(0.0)
}

pub fn sigma_min(a: &Mat) -> f64 {
    if a.nrows() == 0 || a.ncols() == 0 {
        return 0.0;
    }
    singular_values(a).last().copied().unwrap_or(0.0)
}

/// Numerical rank with threshold `RANK_TOL * sigma_max`.
pub fn rank(a: &Mat) -> usize {
    let sv = singular_values(a);
    let Some(&top) = sv.first() else { return 0 };
    if top == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > RANK_TOL * top).count()
}

/// Eigenvalues of a square matrix (LAPACK `dgeev`).
pub fn eigenvalues(a: &Mat) -> Vec<Complex<f64>> {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "eigenvalues of a non-square matrix");
    if n == 0 {
        return Vec::new();
    }
    let mut work_a: Vec<f64> = a.as_slice().to_vec();
    let (mut wr, mut wi) = (vec![0.0; n], vec![0.0; n]);
    let (mut vl, mut vr) = ([0.0; 1], [0.0; 1]);
    let lwork = (8 * n).max(1);
    let mut work = vec![0.0; lwork];
    let mut info = 0;
    let ni = n as i32;
    // SAFETY: buffers are sized per the LAPACK contract; no eigenvectors are requested.
    unsafe {
        lapack::dgeev(b'N', b'N', ni, &mut work_a, ni, &mut wr, &mut wi, &mut vl, 1, &mut vr, 1, &mut work, lwork as i32, &mut info);
    }
    if info == 0 {
        return wr.into_iter().zip(wi).map(|(re, im)| Complex::new(re, im)).collect();
    }
    // LAPACK's QR did not converge; the capped Schur iteration is the last resort.
    Schur::try_new(a.clone(), f64::EPSILON, 100_000)
        .map(|s| s.complex_eigenvalues().iter().copied().collect())
        .expect("eigenvalue iteration failed to converge")
}

/// Orthonormal basis `W` of the right null space: `U W = 0`, `W^T W = I`.
///
/// Tolerates rank deficiency, zero rows and empty inputs. A `0 x n` input has
/// the whole space as its null space.
pub fn null_space(u: &Mat) -> Mat {
    let n = u.ncols();
    if n == 0 {
        return Mat::zeros(0, 0);
    }
    if u.nrows() == 0 || max_abs(u) == 0.0 {
        return Mat::identity(n, n);
    }
    // The n - rank eigenvectors of U^T U with the smallest eigenvalues span
    // null(U); the rank itself comes from the SVD of U.
    let r = rank(u);
    let eig = SymmetricEigen::new(symmetrize(&(u.transpose() * u)));
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let mut w = Mat::zeros(n, n - r);
    for (j, &i) in order.iter().take(n - r).enumerate() {
        w.set_column(j, &eig.eigenvectors.column(i));
    }
    w
}

/// Orthogonal complement of a full-rank `U` (`k x n`, `k < n`): returns `W`
/// with `U W = 0`, orthonormal columns and `[U^T W]` square of full rank.
pub fn orth_complement(u: &Mat) -> Result<Mat> {
    let full = u.nrows().min(u.ncols());
    let r = rank(u);
    if r < full {
        return Err(Error::RankDeficient { rank: r, expected: full });
    }
    if u.nrows() >= u.ncols() {
        return Ok(Mat::zeros(u.ncols(), 0));
    }
    Ok(null_space(u))
}

pub fn kron(a: &Mat, b: &Mat) -> Mat {
    a.kronecker(b)
}

/// Block-diagonal matrix from square or rectangular blocks.
pub fn block_diag(blocks: &[Mat]) -> Mat {
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = Mat::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), (b.nrows(), b.ncols())).copy_from(b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

/// Assemble a block matrix from a grid of blocks. Row heights are taken from
/// the first column, column widths from the first row.
pub fn block(grid: &[&[&Mat]]) -> Result<Mat> {
    let Some(first_row) = grid.first() else { return Ok(Mat::zeros(0, 0)) };
    let heights: Vec<usize> = grid.iter().map(|row| row[0].nrows()).collect();
    let widths: Vec<usize> = first_row.iter().map(|b| b.ncols()).collect();
    let mut out = Mat::zeros(heights.iter().sum(), widths.iter().sum());
    let mut r = 0;
    for (i, row) in grid.iter().enumerate() {
        if row.len() != widths.len() {
            return Err(Error::DimensionMismatch(format!("block row {i} has {} blocks, expected {}", row.len(), widths.len())));
        }
        let mut c = 0;
        for (j, b) in row.iter().enumerate() {
            if b.nrows() != heights[i] || b.ncols() != widths[j] {
                return Err(Error::DimensionMismatch(format!(
                    "block ({i},{j}) is {}x{}, expected {}x{}",
                    b.nrows(),
                    b.ncols(),
                    heights[i],
                    widths[j]
                )));
            }
            out.view_mut((r, c), (b.nrows(), b.ncols())).copy_from(b);
            c += widths[j];
        }
        r += heights[i];
    }
    Ok(out)
}

pub fn hstack(mats: &[&Mat]) -> Result<Mat> {
    block(&[mats])
}

pub fn vstack(mats: &[&Mat]) -> Result<Mat> {
    let rows: Vec<&[&Mat]> = mats.iter().map(std::slice::from_ref).collect();
    block(&rows)
}

/// Symmetric square root factor `L` with `L L^T = S` for `S` PSD. Columns for
/// eigenvalues below `tol` are dropped.
pub fn psd_factor(s: &Mat, tol: f64) -> Mat {
    let n = s.nrows();
    if n == 0 {
        return Mat::zeros(0, 0);
    }
    let eig = SymmetricEigen::new(symmetrize(s));
    let keep: Vec<usize> = (0..n).filter(|&i| eig.eigenvalues[i] > tol).collect();
    let mut l = Mat::zeros(n, keep.len());
    for (j, &i) in keep.iter().enumerate() {
        l.set_column(j, &(eig.eigenvectors.column(i) * eig.eigenvalues[i].sqrt()));
    }
    l
}

/// Row-major constructor used throughout tests and fixtures.
pub fn from_rows(rows: &[&[f64]]) -> Mat {
    let r = rows.len();
    let c = rows.first().map_or(0, |row| row.len());
    Mat::from_fn(r, c, |i, j| rows[i][j])
}
