use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::numerics::{solve_f_step_f64, Matrix, Rng};

/// Guard added to the denominator of the multiplicative update.
pub const SEMI_NMF_EPSILON: f64 = 1e-9;
/// Scale of the half-normal initial `G`.
pub const SEMI_NMF_INIT_STDDEV: f64 = 0.02;

/// Result of [`semi_nmf`]: `X ≈ F·G` with `G ≥ 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct SemiNmf {
    pub f: Matrix,
    pub g: Matrix,
    /// `‖X − FG‖_F` after every alternation, evaluated on the internal
    /// double-precision iterates.
    pub error_trace: Vec<f64>,
    /// Smallest entry of `G` after every update.
    pub g_min_trace: Vec<f64>,
}

/// Semi-NMF by alternating a least-squares `F` update with the multiplicative
/// `G` update of Ding, Li and Jordan.
///
/// One step is one `F` update followed by one `G` update. Iterates are kept in
/// `f64` and rounded to `f32` on return.
pub fn semi_nmf(x: &Matrix, d_prime: usize, steps: usize, rng: &mut Rng) -> Result<SemiNmf> {
    let (rows, cols) = x.shape();
    if d_prime == 0 || d_prime > rows.min(cols) {
        return Err(Error::InvalidArgument(format!(
            "d_prime must be in 1..={} for a {rows}x{cols} matrix, got {d_prime}",
            rows.min(cols)
        )));
    }
    if steps == 0 {
        return Err(Error::InvalidArgument("steps must be at least 1".into()));
    }
    if !x.is_finite() {
        return Err(Error::NonFinite("semi_nmf input"));
    }

    let xd = x.to_dmatrix();
    let mut g = DMatrix::from_fn(d_prime, cols, |_, _| rng.normal(0.0, SEMI_NMF_INIT_STDDEV).abs());
    let mut f = solve_f_step_f64(&xd, &g);
    let mut error_trace = Vec::with_capacity(steps);
    let mut g_min_trace = Vec::with_capacity(steps);

    for step in 0..steps {
        // F is already the least-squares solution for the initial G
        if step > 0 {
            f = solve_f_step_f64(&xd, &g);
        }
        update_g(&xd, &f, &mut g);
        error_trace.push((&xd - &f * &g).norm());
        g_min_trace.push(g.min());
    }
    if !error_trace.last().is_some_and(|e| e.is_finite()) {
        return Err(Error::NonFinite("semi_nmf iterates"));
    }

    Ok(SemiNmf {
        f: Matrix::from_dmatrix(&f),
        g: Matrix::from_dmatrix(&g),
        error_trace,
        g_min_trace,
    })
}

fn update_g(x: &DMatrix<f64>, f: &DMatrix<f64>, g: &mut DMatrix<f64>) {
    let ftx = f.transpose() * x;
    let ftf = f.transpose() * f;
    let ftf_pos = ftf.map(|a| (a.abs() + a) / 2.0);
    let ftf_neg = ftf.map(|a| (a.abs() - a) / 2.0);
    let num_g = &ftf_neg * &*g;
    let den_g = &ftf_pos * &*g;
    for j in 0..g.ncols() {
        for k in 0..g.nrows() {
            let a = ftx[(k, j)];
            let num = (a.abs() + a) / 2.0 + num_g[(k, j)];
            let den = (a.abs() - a) / 2.0 + den_g[(k, j)] + SEMI_NMF_EPSILON;
            g[(k, j)] *= (num / den).sqrt();
        }
    }
}
