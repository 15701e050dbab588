//! Small dense linear-algebra helpers on top of `nalgebra`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Entrywise maximum absolute value.
pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

/// `‖A − Aᵀ‖_max`.
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    max_abs(&(m - m.transpose()))
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Kronecker product `a ⊗ I_p`.
pub fn kron_identity(a: &DMatrix<f64>, p: usize) -> DMatrix<f64> {
    if p == 1 {
        return a.clone();
    }
    a.kronecker(&DMatrix::identity(p, p))
}

/// Block-diagonal matrix from square blocks.
pub fn block_diag(blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let dim: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = DMatrix::zeros(dim, dim);
    let mut offset = 0;
    for b in blocks {
        let s = b.nrows();
        out.view_mut((offset, offset), (s, s)).copy_from(b);
        offset += s;
    }
    out
}

/// The averaging operator `(1/n) 1 1ᵀ ⊗ I_p`.
pub fn averaging_operator(n: usize, p: usize) -> DMatrix<f64> {
    kron_identity(&DMatrix::from_element(n, n, 1.0 / n as f64), p)
}

/// Eigenvalues of a symmetric matrix, ascending.
pub fn sym_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let mut ev: Vec<f64> = SymmetricEigen::new(symmetrize(m)).eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| a.total_cmp(b));
    ev
}

/// Spectral norm of a symmetric matrix (largest absolute eigenvalue).
pub fn sym_spectral_norm(m: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(m).iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

/// Condition number of a symmetric positive definite matrix; `inf` if not PD.
pub fn spd_condition(m: &DMatrix<f64>) -> f64 {
    let ev = sym_eigenvalues(m);
    let (lo, hi) = (ev[0], ev[ev.len() - 1]);
    if lo <= 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

/// Symmetric square root of an SPD matrix.
pub fn spd_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::new(symmetrize(m));
    if eig.eigenvalues.iter().any(|&v| v <= 0.0) {
        return Err(Error::Singular {
            context: "spd_sqrt",
            condition: f64::INFINITY,
        });
    }
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(f64::sqrt));
    Ok(&eig.eigenvectors * d * eig.eigenvectors.transpose())
}

/// Solve `A X = B` for symmetric positive definite `A`.
pub fn spd_solve(a: &DMatrix<f64>, b: &DMatrix<f64>, context: &'static str) -> Result<DMatrix<f64>> {
    let chol = a.clone().cholesky().ok_or(Error::Singular {
        context,
        condition: spd_condition(a),
    })?;
    Ok(chol.solve(b))
}

pub fn spd_solve_vec(a: &DMatrix<f64>, b: &DVector<f64>, context: &'static str) -> Result<DVector<f64>> {
    let chol = a.clone().cholesky().ok_or(Error::Singular {
        context,
        condition: spd_condition(a),
    })?;
    Ok(chol.solve(b))
}

pub fn spd_inverse(a: &DMatrix<f64>, context: &'static str) -> Result<DMatrix<f64>> {
    spd_solve(a, &DMatrix::identity(a.nrows(), a.ncols()), context)
}

/// Orthogonal projector onto the column space of `b`, computed from the
/// eigen-decomposition of `bᵀb`.
pub fn range_projector(b: &DMatrix<f64>) -> DMatrix<f64> {
    let gram = b.transpose() * b;
    let eig = SymmetricEigen::new(symmetrize(&gram));
    let scale = eig.eigenvalues.iter().fold(0.0_f64, |a, v| a.max(v.abs())).max(1.0);
    let tol = scale * 1e-10;
    let mut pinv_diag = DVector::zeros(eig.eigenvalues.len());
    for (i, &v) in eig.eigenvalues.iter().enumerate() {
        if v > tol {
            pinv_diag[i] = 1.0 / v;
        }
    }
    let gram_pinv = &eig.eigenvectors * DMatrix::from_diagonal(&pinv_diag) * eig.eigenvectors.transpose();
    symmetrize(&(b * gram_pinv * b.transpose()))
}

/// Numerical rank of a symmetric matrix (eigenvalues above `tol` relative to the largest).
pub fn sym_rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    let ev = sym_eigenvalues(m);
    let scale = ev.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    if scale == 0.0 {
        return 0;
    }
    ev.iter().filter(|v| v.abs() > rel_tol * scale).count()
}

pub fn matrix_power(m: &DMatrix<f64>, exp: usize) -> DMatrix<f64> {
    let mut result = DMatrix::identity(m.nrows(), m.ncols());
    let mut base = m.clone();
    let mut e = exp;
    while e > 0 {
        if e & 1 == 1 {
            result = &result * &base;
        }
        e >>= 1;
        if e > 0 {
            base = &base * &base;
        }
    }
    result
}

/// Split a stacked vector into `n` blocks of length `p`.
pub fn blocks(v: &DVector<f64>, p: usize) -> Vec<DVector<f64>> {
    (0..v.len() / p).map(|i| v.rows(i * p, p).into_owned()).collect()
}

/// Stack per-agent blocks into one vector.
pub fn stack(parts: &[DVector<f64>]) -> DVector<f64> {
    let len = parts.iter().map(|v| v.len()).sum();
    let mut out = DVector::zeros(len);
    let mut offset = 0;
    for v in parts {
        out.rows_mut(offset, v.len()).copy_from(v);
        offset += v.len();
    }
    out
}
