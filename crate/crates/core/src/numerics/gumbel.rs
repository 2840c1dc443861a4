use crate::error::{Error, Result};

use super::Rng;

/// One draw of the Gumbel-Softmax relaxation.
#[derive(Debug, Clone, PartialEq)]
pub struct GumbelSample {
    /// `softmax((logits + g) / tau)`.
    pub soft: Vec<f64>,
    /// `argmax(soft)`, lowest index on ties.
    pub index: usize,
    /// Straight-through mode: the forward value is the one-hot of `index`.
    pub hard: bool,
}

impl GumbelSample {
    /// The value used in the forward computation: one-hot in straight-through
    /// mode, the soft distribution otherwise. Gradients always go through
    /// `soft` (see [`softmax_backward`]).
    pub fn forward(&self) -> Vec<f64> {
        if self.hard {
            let mut out = vec![0.0; self.soft.len()];
            out[self.index] = 1.0;
            out
        } else {
            self.soft.clone()
        }
    }
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax<T: PartialOrd + Copy>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// `n` draws of standard Gumbel noise, `-ln(-ln u)` with `u ~ U(0, 1)`.
pub fn sample_gumbel(rng: &mut Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| -(-rng.uniform_open().ln()).ln()).collect()
}

/// Gumbel-Softmax with caller-supplied noise. Logits are unconstrained
/// (interpreted as log-probabilities up to a constant).
pub fn gumbel_softmax_with_noise(logits: &[f64], noise: &[f64], tau: f64, hard: bool) -> Result<GumbelSample> {
    if logits.is_empty() {
        return Err(Error::InvalidArgument("gumbel-softmax needs at least one logit".into()));
    }
    if tau.is_nan() || tau <= 0.0 {
        return Err(Error::InvalidArgument(format!("temperature must be positive, got {tau}")));
    }
    if noise.len() != logits.len() {
        return Err(Error::shape(format!(
            "{} logits but {} noise values",
            logits.len(),
            noise.len()
        )));
    }
    let scaled: Vec<f64> = logits.iter().zip(noise).map(|(l, g)| (l + g) / tau).collect();
    if scaled.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("gumbel-softmax logits"));
    }
    let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scaled.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    let soft: Vec<f64> = exps.iter().map(|e| e / total).collect();
    let index = argmax(&scaled);
    Ok(GumbelSample { soft, index, hard })
}

pub fn gumbel_softmax(logits: &[f64], tau: f64, rng: &mut Rng, hard: bool) -> Result<GumbelSample> {
    if logits.is_empty() {
        return Err(Error::InvalidArgument("gumbel-softmax needs at least one logit".into()));
    }
    let noise = sample_gumbel(rng, logits.len());
    gumbel_softmax_with_noise(logits, &noise, tau, hard)
}

/// Vector-Jacobian product of `softmax(logits / tau)` at output `soft`:
/// maps `dL/dsoft` to `dL/dlogits`.
pub fn softmax_backward(soft: &[f64], upstream: &[f64], tau: f64) -> Vec<f64> {
    let dot: f64 = soft.iter().zip(upstream).map(|(s, u)| s * u).sum();
    soft.iter()
        .zip(upstream)
        .map(|(s, u)| s * (u - dot) / tau)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;
    use proptest::prelude::*;

    #[test]
    fn low_temperature_approaches_argmax() {
        let s = gumbel_softmax_with_noise(&[5.0, 0.0, 0.0], &[0.0; 3], 1e-3, true).unwrap();
        assert!((s.soft[0] - 1.0).abs() < 1e-6);
        assert!(s.soft[1] < 1e-6 && s.soft[2] < 1e-6);
        assert_eq!(s.index, 0);
        assert_eq!(s.forward(), vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn ties_pick_lowest_index() {
        let s = gumbel_softmax_with_noise(&[1.0, 3.0, 3.0], &[0.0; 3], 1.0, true).unwrap();
        assert_eq!(s.index, 1);
        assert_eq!(argmax(&[2.0, 2.0]), 0);
    }

    #[test]
    fn soft_forward_when_not_hard() {
        let s = gumbel_softmax_with_noise(&[0.0, 0.0], &[0.0; 2], 1.0, false).unwrap();
        assert_eq!(s.forward(), vec![0.5, 0.5]);
    }

    #[test]
    fn errors() {
        assert!(gumbel_softmax(&[], 1.0, &mut Rng::new(0), true).is_err());
        assert!(gumbel_softmax(&[1.0], 0.0, &mut Rng::new(0), true).is_err());
        assert!(gumbel_softmax(&[1.0], -1.0, &mut Rng::new(0), true).is_err());
        assert!(gumbel_softmax_with_noise(&[1.0], &[0.0, 0.0], 1.0, true).is_err());
    }

    #[test]
    fn equal_logits_give_uniform_hard_samples() {
        let mut rng = Rng::new(123);
        let n = 100_000;
        let zeros = (0..n)
            .filter(|_| gumbel_softmax(&[0.0, 0.0], 1.0, &mut rng, true).unwrap().index == 0)
            .count();
        let freq = zeros as f64 / n as f64;
        assert!((freq - 0.5).abs() < 0.005, "{freq}");
    }

    #[test]
    fn backward_matches_finite_differences() {
        let logits = [0.3, -1.2, 0.8, 0.1];
        let noise = [0.05, 0.4, -0.3, 0.2];
        let up = [1.5, -0.5, 0.25, 2.0];
        let tau = 0.7;
        let f = |l: &[f64]| -> f64 {
            let s = gumbel_softmax_with_noise(l, &noise, tau, false).unwrap();
            s.soft.iter().zip(&up).map(|(a, b)| a * b).sum()
        };
        let s = gumbel_softmax_with_noise(&logits, &noise, tau, false).unwrap();
        let analytic = softmax_backward(&s.soft, &up, tau);
        for k in 0..4 {
            let h = 1e-6;
            let mut p = logits;
            let mut m = logits;
            p[k] += h;
            m[k] -= h;
            let fd = (f(&p) - f(&m)) / (2.0 * h);
            assert!((fd - analytic[k]).abs() < 1e-8, "{k}: {fd} vs {}", analytic[k]);
        }
    }

    proptest! {
        #[test]
        fn soft_is_a_distribution(
            logits in prop::collection::vec(-30.0f64..30.0, 1..12),
            tau in 0.01f64..10.0,
            seed in any::<u64>(),
        ) {
            let s = gumbel_softmax(&logits, tau, &mut Rng::new(seed), true).unwrap();
            let total: f64 = s.soft.iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-9);
            prop_assert!(s.soft.iter().all(|&p| p >= 0.0));
            prop_assert!(s.index < logits.len());
            prop_assert_eq!(s.forward().iter().filter(|&&v| v == 1.0).count(), 1);
        }
    }
}
