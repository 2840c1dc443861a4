use std::f64::consts::{FRAC_1_SQRT_2, PI};

use crate::error::{Error, Result};
use crate::numerics::{grad_check, Matrix};

/// Bottleneck adapter `A(h, r) = up · gelu(down · h) + r`.
///
/// `down` maps the hidden size to the bottleneck (bottleneck × hidden) and
/// `up` maps back (hidden × bottleneck).
#[derive(Debug, Clone, PartialEq)]
pub struct AdapterLayer {
    pub down: Matrix,
    pub up: Matrix,
    pub layer_index: usize,
}

impl AdapterLayer {
    pub fn new(down: Matrix, up: Matrix, layer_index: usize) -> Result<Self> {
        if up.shape() != (down.cols(), down.rows()) {
            return Err(Error::shape(format!(
                "down is {:?} but up is {:?}",
                down.shape(),
                up.shape()
            )));
        }
        Ok(AdapterLayer { down, up, layer_index })
    }

    pub fn hidden(&self) -> usize {
        self.down.cols()
    }

    pub fn bottleneck(&self) -> usize {
        self.down.rows()
    }
}

/// `x·Φ(x)` with the exact normal CDF.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x * FRAC_1_SQRT_2))
}

/// `Φ(x) + x·φ(x)`.
pub fn gelu_derivative(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x * FRAC_1_SQRT_2));
    let pdf = (-0.5 * x * x).exp() / (2.0 * PI).sqrt();
    cdf + x * pdf
}

struct Forward {
    pre: Vec<f64>,
    act: Vec<f64>,
    out: Vec<f64>,
}

fn forward(down: &Matrix, up: &Matrix, h: &[f64], r: &[f64]) -> Forward {
    let pre: Vec<f64> = (0..down.rows())
        .map(|i| down.row(i).iter().zip(h).map(|(&w, x)| f64::from(w) * x).sum())
        .collect();
    let act: Vec<f64> = pre.iter().map(|&p| gelu(p)).collect();
    let out = (0..up.rows())
        .map(|i| up.row(i).iter().zip(&act).map(|(&w, a)| f64::from(w) * a).sum::<f64>() + r[i])
        .collect();
    Forward { pre, act, out }
}

fn check_inputs(layer: &AdapterLayer, h: &[f64], r: &[f64]) -> Result<()> {
    if h.len() != layer.hidden() || r.len() != layer.hidden() {
        return Err(Error::shape(format!(
            "adapter with hidden size {} got h of {} and r of {}",
            layer.hidden(),
            h.len(),
            r.len()
        )));
    }
    Ok(())
}

pub fn adapter_forward(layer: &AdapterLayer, h: &[f64], r: &[f64]) -> Result<Vec<f64>> {
    check_inputs(layer, h, r)?;
    Ok(forward(&layer.down, &layer.up, h, r).out)
}

/// Gradients of `‖A(h, r)‖²`, laid out like the parameter data.
#[derive(Debug, Clone, PartialEq)]
pub struct AdapterGrads {
    pub down: Vec<f64>,
    pub up: Vec<f64>,
    pub h: Vec<f64>,
}

pub fn adapter_gradients(layer: &AdapterLayer, h: &[f64], r: &[f64]) -> Result<AdapterGrads> {
    check_inputs(layer, h, r)?;
    Ok(gradients(&layer.down, &layer.up, h, r))
}

fn gradients(down: &Matrix, up: &Matrix, h: &[f64], r: &[f64]) -> AdapterGrads {
    let fw = forward(down, up, h, r);
    let d_out: Vec<f64> = fw.out.iter().map(|o| 2.0 * o).collect();

    let mut d_up = vec![0.0; up.rows() * up.cols()];
    for i in 0..up.rows() {
        for j in 0..up.cols() {
            d_up[i * up.cols() + j] = d_out[i] * fw.act[j];
        }
    }
    let d_pre: Vec<f64> = (0..up.cols())
        .map(|j| {
            let d_act: f64 = (0..up.rows()).map(|i| f64::from(up.get(i, j)) * d_out[i]).sum();
            d_act * gelu_derivative(fw.pre[j])
        })
        .collect();
    let mut d_down = vec![0.0; down.rows() * down.cols()];
    for i in 0..down.rows() {
        for j in 0..down.cols() {
            d_down[i * down.cols() + j] = d_pre[i] * h[j];
        }
    }
    let d_h = (0..down.cols())
        .map(|j| (0..down.rows()).map(|i| f64::from(down.get(i, j)) * d_pre[i]).sum())
        .collect();
    AdapterGrads {
        down: d_down,
        up: d_up,
        h: d_h,
    }
}

/// Largest relative error between the analytic gradients of
/// `‖adapter_forward(h, r)‖²` with respect to `down`, `up` and `h` and their
/// central finite differences.
pub fn adapter_backward_check(layer: &AdapterLayer, h: &[f64], r: &[f64]) -> Result<f64> {
    check_inputs(layer, h, r)?;
    let as_f32: Vec<f32> = h.iter().map(|&v| v as f32).collect();
    let h_param = Matrix::from_vec(1, h.len(), as_f32)?;
    let params = [layer.down.clone(), layer.up.clone(), h_param];

    let loss = |p: &[Matrix]| -> f64 {
        let h: Vec<f64> = p[2].to_f64();
        forward(&p[0], &p[1], &h, r).out.iter().map(|o| o * o).sum()
    };
    let grad = |p: &[Matrix]| -> Vec<Vec<f64>> {
        let g = gradients(&p[0], &p[1], &p[2].to_f64(), r);
        vec![g.down, g.up, g.h]
    };
    grad_check(loss, grad, &params, 1e-3)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;
    use proptest::prelude::*;

    // Φ(1) = 0.841344746068542948..., so gelu(1) = Φ(1) and gelu(−1) = −(1 − Φ(1))
    const GELU_ONE: f64 = 0.841_344_746_068_542_9;
    const GELU_MINUS_ONE: f64 = -0.158_655_253_931_457_05;

    fn random_layer(hidden: usize, bottleneck: usize, rng: &mut Rng) -> AdapterLayer {
        let down = Matrix::from_fn(bottleneck, hidden, |_, _| rng.normal(0.0, 0.8) as f32);
        let up = Matrix::from_fn(hidden, bottleneck, |_, _| rng.normal(0.0, 0.8) as f32);
        AdapterLayer::new(down, up, 1).unwrap()
    }

    #[test]
    fn gelu_reference_values() {
        assert!((gelu(1.0) - GELU_ONE).abs() < 1e-15);
        assert!((gelu(-1.0) - GELU_MINUS_ONE).abs() < 1e-15);
        assert_eq!(gelu(0.0), 0.0);
        assert!((gelu_derivative(0.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn identity_layer_applies_gelu() {
        let layer = AdapterLayer::new(Matrix::identity(2), Matrix::identity(2), 1).unwrap();
        let out = adapter_forward(&layer, &[1.0, -1.0], &[0.0, 0.0]).unwrap();
        assert!((out[0] - GELU_ONE).abs() < 1e-15);
        assert!((out[1] - GELU_MINUS_ONE).abs() < 1e-15);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = Rng::new(5);
        for _ in 0..5 {
            let layer = random_layer(4, 2, &mut rng);
            let h: Vec<f64> = (0..4).map(|_| rng.normal(0.0, 1.0)).collect();
            let r: Vec<f64> = (0..4).map(|_| rng.normal(0.0, 1.0)).collect();
            let err = adapter_backward_check(&layer, &h, &r).unwrap();
            assert!(err < 1e-4, "{err}");
        }
    }

    #[test]
    fn zero_up_projection_gradients_still_agree() {
        let mut rng = Rng::new(6);
        let mut layer = random_layer(4, 2, &mut rng);
        layer.up = Matrix::zeros(4, 2);
        let h = [0.3, -0.2, 1.0, 0.5];
        let r = [1.0, 0.0, -1.0, 2.0];
        assert!(adapter_backward_check(&layer, &h, &r).unwrap() < 1e-4);
    }

    #[test]
    fn zero_inputs_give_zero_loss() {
        let layer = random_layer(4, 2, &mut Rng::new(7));
        let out = adapter_forward(&layer, &[0.0; 4], &[0.0; 4]).unwrap();
        assert!(out.iter().all(|&o| o == 0.0));
        let g = adapter_gradients(&layer, &[0.0; 4], &[0.0; 4]).unwrap();
        assert!(g.down.iter().chain(&g.up).chain(&g.h).all(|&v| v == 0.0));
    }

    #[test]
    fn shape_errors() {
        assert!(AdapterLayer::new(Matrix::zeros(2, 4), Matrix::zeros(2, 4), 1).is_err());
        let layer = random_layer(4, 2, &mut Rng::new(0));
        assert!(adapter_forward(&layer, &[0.0; 3], &[0.0; 4]).is_err());
        assert!(adapter_backward_check(&layer, &[0.0; 4], &[0.0; 2]).is_err());
    }

    proptest! {
        #[test]
        fn zero_up_is_residual_passthrough(
            h in prop::collection::vec(-10.0f64..10.0, 6),
            r in prop::collection::vec(-10.0f64..10.0, 6),
        ) {
            let mut layer = random_layer(6, 3, &mut Rng::new(1));
            layer.up = Matrix::zeros(6, 3);
            prop_assert_eq!(adapter_forward(&layer, &h, &r).unwrap(), r);
        }

        #[test]
        fn residual_is_additive(
            h in prop::collection::vec(-3.0f64..3.0, 4),
            r in prop::collection::vec(-3.0f64..3.0, 4),
        ) {
            let layer = random_layer(4, 2, &mut Rng::new(2));
            let with = adapter_forward(&layer, &h, &r).unwrap();
            let without = adapter_forward(&layer, &h, &[0.0; 4]).unwrap();
            for i in 0..4 {
                prop_assert!((with[i] - without[i] - r[i]).abs() < 1e-12);
            }
        }
    }
}
