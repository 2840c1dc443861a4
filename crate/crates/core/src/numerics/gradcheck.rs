use crate::error::{Error, Result};

use super::Matrix;

/// Gradient magnitudes below this are compared in absolute terms.
pub const GRAD_CHECK_ABS_FLOOR: f64 = 1e-6;

/// Compares analytic gradients against central finite differences.
///
/// `grad` returns one `f64` buffer per parameter matrix, laid out like the
/// matrix data. Each entry is perturbed by `±eps`; since parameters are stored
/// as `f32`, the difference quotient divides by the step that was actually
/// representable rather than by `2·eps`. The per-entry error is
/// `|a − n| / max(|a|, |n|, GRAD_CHECK_ABS_FLOOR)`; the maximum is returned.
pub fn grad_check<L, G>(loss: L, grad: G, params: &[Matrix], eps: f64) -> Result<f64>
where
    L: Fn(&[Matrix]) -> f64,
    G: Fn(&[Matrix]) -> Vec<Vec<f64>>,
{
    if eps.is_nan() || eps <= 0.0 {
        return Err(Error::InvalidArgument(format!("eps must be positive, got {eps}")));
    }
    if !loss(params).is_finite() {
        return Err(Error::NonFinite("loss"));
    }
    let analytic = grad(params);
    if analytic.len() != params.len() {
        return Err(Error::shape(format!(
            "{} gradient buffers for {} parameters",
            analytic.len(),
            params.len()
        )));
    }

    let mut work: Vec<Matrix> = params.to_vec();
    let mut worst = 0.0f64;
    for (p, grads) in analytic.iter().enumerate() {
        if grads.len() != params[p].data().len() {
            return Err(Error::shape(format!("gradient {p} has the wrong length")));
        }
        for (k, &a) in grads.iter().enumerate() {
            let orig = params[p].data()[k];
            let plus = (f64::from(orig) + eps) as f32;
            let minus = (f64::from(orig) - eps) as f32;
            work[p].data_mut()[k] = plus;
            let lp = loss(&work);
            work[p].data_mut()[k] = minus;
            let lm = loss(&work);
            work[p].data_mut()[k] = orig;
            if !lp.is_finite() || !lm.is_finite() {
                return Err(Error::NonFinite("loss"));
            }
            let step = f64::from(plus) - f64::from(minus);
            let numeric = (lp - lm) / step;
            let denom = a.abs().max(numeric.abs()).max(GRAD_CHECK_ABS_FLOOR);
            worst = worst.max((a - numeric).abs() / denom);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;

    #[test]
    fn quadratic_form() {
        let mut rng = Rng::new(4);
        let p = Matrix::from_fn(3, 4, |_, _| rng.normal(0.0, 1.0) as f32);
        let loss = |ps: &[Matrix]| ps[0].data().iter().map(|&v| f64::from(v).powi(2)).sum();
        let grad = |ps: &[Matrix]| vec![ps[0].data().iter().map(|&v| 2.0 * f64::from(v)).collect()];
        let err = grad_check(loss, grad, &[p], 1e-3).unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn constant_loss() {
        let p = Matrix::from_fn(2, 2, |i, j| (i + j) as f32);
        let err = grad_check(|_| 3.5, |ps| vec![vec![0.0; ps[0].data().len()]], &[p], 1e-3).unwrap();
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn wrong_gradient_is_caught() {
        let p = Matrix::from_fn(2, 2, |i, j| 1.0 + (i + j) as f32);
        let loss = |ps: &[Matrix]| ps[0].data().iter().map(|&v| f64::from(v).powi(2)).sum();
        let grad = |ps: &[Matrix]| vec![ps[0].data().iter().map(|&v| 3.0 * f64::from(v)).collect()];
        assert!(grad_check(loss, grad, &[p], 1e-3).unwrap() > 0.1);
    }

    #[test]
    fn non_finite_loss_errors() {
        let p = Matrix::zeros(1, 1);
        assert!(matches!(
            grad_check(|_| f64::NAN, |_| vec![vec![0.0]], std::slice::from_ref(&p), 1e-3),
            Err(Error::NonFinite(_))
        ));
        assert!(grad_check(|_| 0.0, |_| vec![vec![0.0]], &[p], 0.0).is_err());
    }
}
