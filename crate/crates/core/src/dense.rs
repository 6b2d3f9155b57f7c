//! Small dense symmetric eigenproblems.

use faer::{Mat, Side};

use crate::error::{Error, Result};

fn to_mat(a: &[Vec<f64>]) -> Mat<f64> {
    let n = a.len();
    // symmetrize to guard against roundoff asymmetry
    Mat::from_fn(n, n, |i, j| 0.5 * (a[i][j] + a[j][i]))
}

/// Eigenvalues of a symmetric matrix, ascending.
pub fn sym_eigenvalues(a: &[Vec<f64>]) -> Result<Vec<f64>> {
    if a.is_empty() {
        return Ok(Vec::new());
    }
    to_mat(a).self_adjoint_eigenvalues(Side::Lower).map_err(|e| Error::Eigen(format!("{e:?}")))
}

/// Eigenvalues of `S v = λ M v` for symmetric `S` and SPD `M`, ascending.
pub fn generalized_eigenvalues(s: &[Vec<f64>], m: &[Vec<f64>]) -> Result<Vec<f64>> {
    let n = s.len();
    if m.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: m.len() });
    }
    let eig = to_mat(m).self_adjoint_eigen(Side::Lower).map_err(|e| Error::Eigen(format!("{e:?}")))?;
    let u = eig.U();
    let lam = eig.S().column_vector();
    for i in 0..n {
        if !(lam[i] > 0.0) {
            return Err(Error::Eigen("mass matrix is not positive definite".into()));
        }
    }
    // M^{-1/2} = U Λ^{-1/2} Uᵀ
    let mut w = Mat::<f64>::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            w[(i, j)] = (0..n).map(|k| u[(i, k)] * u[(j, k)] / lam[k].sqrt()).sum();
        }
    }
    let a = &w * to_mat(s) * &w;
    let rows: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| a[(i, j)]).collect()).collect();
    sym_eigenvalues(&rows)
}
