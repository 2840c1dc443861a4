use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

use super::Matrix;

/// Relative eigenvalue cutoff used by [`pseudo_inverse_sym`].
const PINV_CUTOFF: f64 = 1e-10;

/// Moore-Penrose pseudo-inverse of a symmetric positive semi-definite matrix
/// via its eigendecomposition. Eigenvalues below `1e-10 * max_eigenvalue` are
/// treated as zero.
pub fn pseudo_inverse_sym(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let eig = SymmetricEigen::new(a.clone());
    let max = eig.eigenvalues.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    let cutoff = PINV_CUTOFF * max;
    let mut out = DMatrix::<f64>::zeros(n, n);
    for (k, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda.abs() <= cutoff || lambda == 0.0 {
            continue;
        }
        let v = eig.eigenvectors.column(k);
        out += (v * v.transpose()) / lambda;
    }
    out
}

/// Least-squares update `F = X Gᵀ (G Gᵀ)⁺` in double precision.
pub fn solve_f_step_f64(x: &DMatrix<f64>, g: &DMatrix<f64>) -> DMatrix<f64> {
    let gram = g * g.transpose();
    (x * g.transpose()) * pseudo_inverse_sym(&gram)
}

/// Minimum-norm minimizer of `‖X − F G‖_F` over `F`.
pub fn solve_f_step(x: &Matrix, g: &Matrix) -> Result<Matrix> {
    if x.cols() != g.cols() {
        return Err(Error::shape(format!(
            "X has {} columns but G has {}",
            x.cols(),
            g.cols()
        )));
    }
    if !x.is_finite() {
        return Err(Error::NonFinite("X"));
    }
    if !g.is_finite() {
        return Err(Error::NonFinite("G"));
    }
    let f = solve_f_step_f64(&x.to_dmatrix(), &g.to_dmatrix());
    let out = Matrix::from_dmatrix(&f);
    if !out.is_finite() {
        return Err(Error::NonFinite("F"));
    }
    Ok(out)
}
