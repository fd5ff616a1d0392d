//! Dense linear-algebra helpers shared by the estimation and testing code.
//!
//! All matrices are `nalgebra::DMatrix<f64>`. `vec` is the usual
//! column-stacking operator, which coincides with nalgebra's column-major
//! storage order.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative singular-value cutoff used by every pseudo-inverse and solve.
pub const SVD_RELATIVE_CUTOFF: f64 = 1e-10;

pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a.kronecker(b)
}

/// Column-stacking `vec` operator.
pub fn vec_of(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(m.as_slice())
}

/// Inverse of [`vec_of`].
pub fn unvec(v: &[f64], rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_column_slice(rows, cols, v)
}

pub fn identity(n: usize) -> DMatrix<f64> {
    DMatrix::identity(n, n)
}

/// Symmetric positive-semidefinite square root. Negative eigenvalues produced
/// by rounding are clamped to zero.
pub fn sym_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let vals = eig.eigenvalues.map(|x| x.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose()
}

/// Moore–Penrose inverse with singular values below `rel_cutoff * sigma_max`
/// treated as zero. Returns the inverse and the numerical rank.
pub fn pinv(m: &DMatrix<f64>, rel_cutoff: f64) -> (DMatrix<f64>, usize) {
    if m.nrows() == 0 || m.ncols() == 0 {
        return (DMatrix::zeros(m.ncols(), m.nrows()), 0);
    }
    let svd = m.clone().svd(true, true);
    let u = svd.u.expect("u requested");
    let v_t = svd.v_t.expect("v_t requested");
    let sigma_max = svd.singular_values.max();
    let cut = rel_cutoff * sigma_max;
    let mut rank = 0;
    let inv_s = svd.singular_values.map(|s| {
        if s > cut && s > 0.0 {
            rank += 1;
            1.0 / s
        } else {
            0.0
        }
    });
    let pinv = v_t.transpose() * DMatrix::from_diagonal(&inv_s) * u.transpose();
    (pinv, rank)
}

/// 2-norm condition number (infinite for singular input).
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 1.0;
    }
    let s = m.clone().singular_values();
    let (max, min) = (s.max(), s.min());
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Solves a square system through the SVD. Fails when the matrix is
/// numerically rank deficient under [`SVD_RELATIVE_CUTOFF`].
pub fn solve_square(a: &DMatrix<f64>, b: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let (inv, rank) = pinv(a, SVD_RELATIVE_CUTOFF);
    if rank < a.nrows() {
        return Err(Error::Singular { what: what.to_string(), condition: condition_number(a) });
    }
    Ok(inv * b)
}

/// Square inverse through the SVD, failing on numerical singularity.
pub fn inverse(a: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    solve_square(a, &identity(a.nrows()), what)
}

/// Block companion matrix of `I - sum_i M_i z^i`; its eigenvalues are the
/// reciprocals of the roots of the determinantal polynomial.
pub fn companion(blocks: &[DMatrix<f64>], d: usize) -> DMatrix<f64> {
    let k = blocks.len();
    let mut c = DMatrix::zeros(d * k, d * k);
    for (i, b) in blocks.iter().enumerate() {
        c.view_mut((0, i * d), (d, d)).copy_from(b);
    }
    for i in 1..k {
        c.view_mut((i * d, (i - 1) * d), (d, d)).copy_from(&identity(d));
    }
    c
}

/// Moduli of the eigenvalues of the block companion matrix, sorted
/// in decreasing order.
pub fn companion_moduli(blocks: &[DMatrix<f64>], d: usize) -> Vec<f64> {
    if blocks.is_empty() {
        return Vec::new();
    }
    let c = companion(blocks, d);
    let mut m: Vec<f64> = c.complex_eigenvalues().iter().map(|z| z.norm()).collect();
    m.sort_by(|a, b| b.total_cmp(a));
    m
}

/// Lower Cholesky factor of a symmetric positive-definite matrix.
pub fn cholesky_lower(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    m.clone().cholesky().map(|c| c.l()).ok_or_else(|| Error::Argument(format!("{what} is not positive definite")))
}

pub fn frobenius(m: &DMatrix<f64>) -> f64 {
    m.norm()
}
