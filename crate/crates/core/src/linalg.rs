//! Small dense helpers on top of `nalgebra`.
//!
//! Everything here works on k×k Gram-sized matrices; no routine in the crate
//! forms an N×N object outside of test oracles.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Relative eigenvalue cutoff used by [`sym_ginv`].
pub const GINV_REL_TOL: f64 = 1e-12;

/// Tolerance on the null-space component of a unit vector when deciding
/// whether a coefficient is identified.
const IDENT_TOL: f64 = 1e-6;

/// Inverse of a symmetric positive definite matrix via Cholesky.
pub fn spd_inverse(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let chol = a
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Singular("Gram matrix is not positive definite".into()))?;
    Ok(chol.inverse())
}

/// Solve `a x = b` for symmetric positive definite `a`.
pub fn spd_solve(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let chol = a
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Singular("Gram matrix is not positive definite".into()))?;
    Ok(chol.solve(b))
}

/// Symmetric generalized inverse with diagonal equilibration.
#[derive(Debug, Clone)]
pub struct GInverse {
    pub inverse: DMatrix<f64>,
    pub rank: usize,
    /// `identified[i]` is false when `e_i` has a component in the null space,
    /// i.e. coefficient `i` cannot be determined from the system.
    pub identified: Vec<bool>,
}

impl GInverse {
    pub fn is_singular(&self) -> bool {
        self.rank < self.inverse.nrows()
    }
}

/// Generalized inverse of a symmetric PSD matrix.
///
/// The matrix is first scaled to unit diagonal (zero diagonals stay zero),
/// then eigenvalues below `rel_tol` times the largest one are discarded.
/// Coordinates with a zero diagonal get zero rows and columns, which is how
/// `invsym`-style routines treat non-identified coefficients.
pub fn sym_ginv(a: &DMatrix<f64>, rel_tol: f64) -> GInverse {
    let k = a.nrows();
    let scale: Vec<f64> = (0..k)
        .map(|i| {
            let d = a[(i, i)];
            if d > 0.0 {
                1.0 / d.sqrt()
            } else {
                0.0
            }
        })
        .collect();
    let mut s = DMatrix::from_fn(k, k, |r, c| a[(r, c)] * scale[r] * scale[c]);
    // symmetrize against rounding in the caller's arithmetic
    s = (&s + s.transpose()) * 0.5;
    let eig = SymmetricEigen::new(s);
    let max_ev = eig.eigenvalues.iter().cloned().fold(0.0_f64, f64::max);
    let cut = rel_tol * max_ev;

    let mut pinv = DMatrix::zeros(k, k);
    let mut rank = 0;
    let mut null_weight = vec![0.0; k];
    for (idx, &ev) in eig.eigenvalues.iter().enumerate() {
        let v = eig.eigenvectors.column(idx);
        if ev > cut && max_ev > 0.0 {
            rank += 1;
            pinv += (v * v.transpose()) / ev;
        } else {
            for i in 0..k {
                null_weight[i] += v[i] * v[i];
            }
        }
    }
    let inverse = DMatrix::from_fn(k, k, |r, c| pinv[(r, c)] * scale[r] * scale[c]);
    let identified = (0..k)
        .map(|i| scale[i] > 0.0 && null_weight[i].sqrt() <= IDENT_TOL)
        .collect();
    GInverse {
        inverse,
        rank,
        identified,
    }
}

/// Sequential (column-order) Cholesky sweep that keeps the first occurrence
/// of each collinear set. Returns the indices of the retained columns.
///
/// Column `i` is dropped when its residual pivot falls to `tol` times its
/// own diagonal (exact collinearity with earlier columns), or when the
/// column itself is numerically zero relative to the largest diagonal.
pub fn independent_columns(gram: &DMatrix<f64>, tol: f64) -> Vec<usize> {
    let k = gram.nrows();
    let max_diag = (0..k).map(|i| gram[(i, i)]).fold(0.0_f64, f64::max);
    // rows of the partial Cholesky factor for kept columns
    let mut l: Vec<Vec<f64>> = Vec::new();
    let mut kept = Vec::new();
    for i in 0..k {
        let diag = gram[(i, i)];
        if diag <= tol * tol * max_diag || diag <= 0.0 {
            continue;
        }
        // project column i on the kept columns
        let mut row = Vec::with_capacity(kept.len());
        for (p, &c) in kept.iter().enumerate() {
            let mut v = gram[(i, c)];
            for q in 0..p {
                v -= row[q] * l[p][q];
            }
            row.push(v / l[p][p]);
        }
        let pivot = diag - row.iter().map(|v| v * v).sum::<f64>();
        if pivot <= tol * diag {
            continue;
        }
        row.push(pivot.sqrt());
        l.push(row);
        kept.push(i);
    }
    kept
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(a: &DMatrix<f64>) -> f64 {
    let s = (a + a.transpose()) * 0.5;
    SymmetricEigen::new(s)
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

/// Largest absolute entry.
pub fn max_abs(a: &DMatrix<f64>) -> f64 {
    a.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

/// `trace(a * b)` for same-shaped square matrices, without forming the product.
pub fn trace_of_product(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let k = a.nrows();
    let mut t = 0.0;
    for r in 0..k {
        for c in 0..k {
            t += a[(r, c)] * b[(c, r)];
        }
    }
    t
}
