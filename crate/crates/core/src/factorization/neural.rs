use std::ops::Range;
use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::numerics::{argmax, gumbel_softmax_with_noise, sample_gumbel, softmax_backward, Matrix, Rng};

use super::{FactorizationModel, Method, ModelMeta, TauSchedule, DEFAULT_CLUSTERS, DEFAULT_D_PRIME, DEFAULT_STEPS};

/// Scale of the initial assignment logits.
const LOGIT_INIT_STDDEV: f64 = 0.02;
/// Rows are processed in this many fixed blocks so that gradient sums do not
/// depend on the thread count.
const ROW_BLOCKS: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct NeuralConfig {
    pub clusters: usize,
    pub d_prime: usize,
    pub steps: usize,
    pub tau: TauSchedule,
    pub lr: f64,
}

impl Default for NeuralConfig {
    fn default() -> Self {
        NeuralConfig {
            clusters: DEFAULT_CLUSTERS,
            d_prime: DEFAULT_D_PRIME,
            steps: DEFAULT_STEPS,
            tau: TauSchedule::default(),
            lr: 1e-2,
        }
    }
}

impl NeuralConfig {
    pub fn validate(&self) -> Result<()> {
        if self.clusters == 0 || self.d_prime == 0 {
            return Err(Error::InvalidArgument("clusters and d_prime must be at least 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidArgument(format!("learning rate must be positive, got {}", self.lr)));
        }
        self.tau.validate()
    }
}

/// How the cluster indicator enters the forward computation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relaxation {
    /// One-hot sample forward, gradient through the soft sample.
    StraightThrough,
    /// Soft sample in both directions; the exact gradient of the relaxed loss.
    Soft,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    /// `‖R‖_F`.
    Norm,
    /// `½‖R‖_F²`; same minimizers, smooth at zero. Used for descent.
    HalfSquared,
}

/// Value and gradients of the reconstruction objective. Gradient buffers are
/// laid out like the matching parameter's data.
#[derive(Debug, Clone)]
pub struct ObjectiveGrads {
    pub loss: f64,
    pub f: Vec<f64>,
    pub g: Vec<Vec<f64>>,
    pub z: Vec<f64>,
    /// Indicator rows used in the forward pass, |V|×C row-major.
    pub forward_weights: Vec<f64>,
}

struct BlockOut {
    sq: f64,
    f: Vec<f64>,
    z: Vec<f64>,
    g: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

/// Evaluates `‖X − Σ_c diag(i_c) F G^c‖` where row `v` of the indicator is a
/// Gumbel-Softmax sample from logits `Z_v` with the given `noise` (|V|×C).
#[allow(clippy::too_many_arguments)]
pub fn eq4_objective(
    x: &Matrix,
    f: &Matrix,
    gs: &[Matrix],
    z: &Matrix,
    noise: &Matrix,
    tau: f64,
    relaxation: Relaxation,
    objective: Objective,
) -> Result<ObjectiveGrads> {
    let (n, dim) = x.shape();
    let clusters = gs.len();
    let d_prime = f.cols();
    if clusters == 0 {
        return Err(Error::InvalidArgument("need at least one up-projection".into()));
    }
    if f.rows() != n || gs.iter().any(|g| g.shape() != (d_prime, dim)) {
        return Err(Error::shape("X, F and G do not chain"));
    }
    if z.shape() != (n, clusters) || noise.shape() != (n, clusters) {
        return Err(Error::shape("logits and noise must be |V|×C"));
    }

    let nb = ROW_BLOCKS.min(n.max(1));
    let blocks: Vec<Range<usize>> = (0..nb).map(|b| b * n / nb..(b + 1) * n / nb).collect();
    let outs = blocks
        .into_par_iter()
        .map(|rows| block_pass(x, f, gs, z, noise, tau, relaxation, rows))
        .collect::<Result<Vec<_>>>()?;

    let mut sq = 0.0;
    let mut gf = Vec::with_capacity(n * d_prime);
    let mut gz = Vec::with_capacity(n * clusters);
    let mut gg = vec![vec![0.0; d_prime * dim]; clusters];
    let mut weights = Vec::with_capacity(n * clusters);
    for out in outs {
        sq += out.sq;
        gf.extend(out.f);
        gz.extend(out.z);
        weights.extend(out.weights);
        for (acc, part) in gg.iter_mut().zip(out.g) {
            if !part.is_empty() {
                for (a, p) in acc.iter_mut().zip(part) {
                    *a += p;
                }
            }
        }
    }

    let (loss, scale) = match objective {
        Objective::HalfSquared => (sq / 2.0, 1.0),
        Objective::Norm => {
            let norm = sq.sqrt();
            (norm, if norm > 0.0 { 1.0 / norm } else { 0.0 })
        }
    };
    if scale != 1.0 {
        for v in gf.iter_mut().chain(gz.iter_mut()).chain(gg.iter_mut().flatten()) {
            *v *= scale;
        }
    }
    Ok(ObjectiveGrads {
        loss,
        f: gf,
        g: gg,
        z: gz,
        forward_weights: weights,
    })
}

// Gradients here are of ½‖R‖² over the block's rows.
#[allow(clippy::too_many_arguments)]
fn block_pass(
    x: &Matrix,
    f: &Matrix,
    gs: &[Matrix],
    z: &Matrix,
    noise: &Matrix,
    tau: f64,
    relaxation: Relaxation,
    rows: Range<usize>,
) -> Result<BlockOut> {
    let clusters = gs.len();
    let d_prime = f.cols();
    let dim = x.cols();
    let mut out = BlockOut {
        sq: 0.0,
        f: Vec::with_capacity(rows.len() * d_prime),
        z: Vec::with_capacity(rows.len() * clusters),
        g: vec![Vec::new(); clusters],
        weights: Vec::with_capacity(rows.len() * clusters),
    };
    let mut residual = vec![0.0f64; dim];
    let mut u = vec![vec![0.0f64; d_prime]; clusters];
    for v in rows {
        let logits: Vec<f64> = z.row(v).iter().map(|&l| f64::from(l)).collect();
        let noise_row: Vec<f64> = noise.row(v).iter().map(|&e| f64::from(e)).collect();
        let sample = gumbel_softmax_with_noise(&logits, &noise_row, tau, relaxation == Relaxation::StraightThrough)?;
        let w = sample.forward();
        let fv = f.row(v);

        residual
            .iter_mut()
            .zip(x.row(v))
            .for_each(|(r, &xv)| *r = f64::from(xv));
        for (c, &wc) in w.iter().enumerate() {
            if wc != 0.0 {
                let proj = Matrix::vec_mul(fv, &gs[c]);
                for (r, p) in residual.iter_mut().zip(proj) {
                    *r -= wc * p;
                }
            }
        }
        out.sq += residual.iter().map(|r| r * r).sum::<f64>();

        // u_c = G^c R_vᵀ
        for (c, uc) in u.iter_mut().enumerate() {
            let g = &gs[c];
            for (k, slot) in uc.iter_mut().enumerate() {
                *slot = g
                    .row(k)
                    .iter()
                    .zip(&residual)
                    .map(|(&a, r)| f64::from(a) * r)
                    .sum();
            }
        }
        let mut df = vec![0.0f64; d_prime];
        let mut dw = vec![0.0f64; clusters];
        for c in 0..clusters {
            dw[c] = -fv.iter().zip(&u[c]).map(|(&a, b)| f64::from(a) * b).sum::<f64>();
            if w[c] != 0.0 {
                for (d, uk) in df.iter_mut().zip(&u[c]) {
                    *d -= w[c] * uk;
                }
                let acc = &mut out.g[c];
                if acc.is_empty() {
                    acc.resize(d_prime * dim, 0.0);
                }
                for (k, &fk) in fv.iter().enumerate() {
                    let coef = w[c] * f64::from(fk);
                    if coef != 0.0 {
                        for (a, r) in acc[k * dim..(k + 1) * dim].iter_mut().zip(&residual) {
                            *a -= coef * r;
                        }
                    }
                }
            }
        }
        out.f.extend(df);
        out.z.extend(softmax_backward(&sample.soft, &dw, tau));
        out.weights.extend(w);
    }
    Ok(out)
}

/// `‖X − Σ_c diag(i_c) F G^c‖_F` with hard assignments.
pub(crate) fn hard_loss(x: &Matrix, f: &Matrix, gs: &[Matrix], assignments: &[usize]) -> f64 {
    (0..x.rows())
        .into_par_iter()
        .map(|v| {
            let proj = Matrix::vec_mul(f.row(v), &gs[assignments[v]]);
            x.row(v)
                .iter()
                .zip(proj)
                .map(|(&a, b)| (f64::from(a) - b).powi(2))
                .sum::<f64>()
        })
        .collect::<Vec<_>>()
        .into_iter()
        .sum::<f64>()
        .sqrt()
}

pub(crate) fn argmax_rows(z: &Matrix) -> Vec<usize> {
    (0..z.rows()).map(|v| argmax(z.row(v))).collect()
}

pub(crate) enum UpProjections<'a> {
    Frozen(&'a [Matrix]),
    Trainable(&'a mut [Matrix]),
}

impl UpProjections<'_> {
    fn get(&self) -> &[Matrix] {
        match self {
            UpProjections::Frozen(g) => g,
            UpProjections::Trainable(g) => g,
        }
    }
}

/// Plain gradient descent on `½‖R‖²` with straight-through Gumbel-Softmax
/// assignments.
///
/// The returned trace holds the deterministic loss `‖R‖` (hard argmax of `Z`,
/// no noise) before the first step and after every step, so it has
/// `steps + 1` entries.
#[allow(clippy::too_many_arguments)]
pub(crate) fn descend(
    x: &Matrix,
    f: &mut Matrix,
    mut gs: UpProjections<'_>,
    z: &mut Matrix,
    steps: usize,
    tau: TauSchedule,
    lr: f64,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    let clusters = z.cols();
    let mut trace = Vec::with_capacity(steps + 1);
    trace.push(hard_loss(x, f, gs.get(), &argmax_rows(z)));
    for step in 0..steps {
        let mut noise = Matrix::zeros(x.rows(), clusters);
        for v in 0..x.rows() {
            for (slot, e) in noise.row_mut(v).iter_mut().zip(sample_gumbel(rng, clusters)) {
                *slot = e as f32;
            }
        }
        let grads = eq4_objective(
            x,
            f,
            gs.get(),
            z,
            &noise,
            tau.at(step, steps),
            Relaxation::StraightThrough,
            Objective::HalfSquared,
        )
        .map_err(|e| match e {
            Error::NonFinite(_) => Error::Divergence { step, loss: f64::NAN },
            other => other,
        })?;
        if !grads.loss.is_finite() {
            return Err(Error::Divergence { step, loss: grads.loss });
        }
        apply(f, &grads.f, lr);
        apply(z, &grads.z, lr);
        if let UpProjections::Trainable(g) = &mut gs {
            for (gc, grad) in g.iter_mut().zip(&grads.g) {
                apply(gc, grad, lr);
            }
        }
        let loss = hard_loss(x, f, gs.get(), &argmax_rows(z));
        let params_finite = f.is_finite() && z.is_finite() && gs.get().iter().all(Matrix::is_finite);
        if !loss.is_finite() || !params_finite {
            return Err(Error::Divergence { step, loss });
        }
        trace.push(loss);
    }
    Ok(trace)
}

fn apply(param: &mut Matrix, grad: &[f64], lr: f64) {
    for (p, g) in param.data_mut().iter_mut().zip(grad) {
        *p = (f64::from(*p) - lr * g) as f32;
    }
}

/// Jointly learns token factors, `C` up-projections and assignment logits by
/// gradient descent on the reconstruction loss. Final assignments are the
/// argmax of the learned logits.
///
/// `F` and `G` start from `N(0, s²)` with `s⁴ = rms(X)²/D′`, so the initial
/// reconstruction has roughly the scale of `X`; logits start near zero.
pub fn factorize_neural(x: &Matrix, config: &NeuralConfig, rng: &mut Rng) -> Result<(FactorizationModel, Vec<f64>)> {
    config.validate()?;
    let (n, dim) = x.shape();
    if n == 0 || dim == 0 {
        return Err(Error::InvalidArgument("cannot factorize an empty matrix".into()));
    }
    if !x.is_finite() {
        return Err(Error::NonFinite("factorize_neural input"));
    }
    let rms = x.frobenius_norm() / ((n * dim) as f64).sqrt();
    let s = (rms * rms / config.d_prime as f64).sqrt().sqrt();
    let mut f = Matrix::from_fn(n, config.d_prime, |_, _| rng.normal(0.0, s) as f32);
    let mut gs: Vec<Matrix> = (0..config.clusters)
        .map(|_| Matrix::from_fn(config.d_prime, dim, |_, _| rng.normal(0.0, s) as f32))
        .collect();
    let mut z = Matrix::from_fn(n, config.clusters, |_, _| rng.normal(0.0, LOGIT_INIT_STDDEV) as f32);

    let trace = descend(
        x,
        &mut f,
        UpProjections::Trainable(&mut gs),
        &mut z,
        config.steps,
        config.tau,
        config.lr,
        rng,
    )?;

    let mut meta = ModelMeta::new(Method::Neural, config.d_prime, config.clusters, dim, config.steps, rng.seed());
    meta.tau = config.tau;
    meta.lr = Some(config.lr);
    let assignments = argmax_rows(&z);
    let model = FactorizationModel::new(f, Arc::new(gs), assignments, Some(z), meta)?;
    Ok((model, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::factorization::reconstruction_error;
    use crate::numerics::grad_check;

    fn random(rows: usize, cols: usize, sd: f64, rng: &mut Rng) -> Matrix {
        Matrix::from_fn(rows, cols, |_, _| rng.normal(0.0, sd) as f32)
    }

    fn gumbel_matrix(rows: usize, cols: usize, rng: &mut Rng) -> Matrix {
        let data = sample_gumbel(rng, rows * cols);
        Matrix::from_f64(rows, cols, &data).unwrap()
    }

    #[test]
    fn single_cluster_loss_decreases() {
        let mut rng = Rng::new(12);
        let x = random(10, 6, 1.0, &mut rng);
        let config = NeuralConfig {
            clusters: 1,
            d_prime: 3,
            steps: 100,
            ..NeuralConfig::default()
        };
        let (model, trace) = factorize_neural(&x, &config, &mut rng).unwrap();
        assert_eq!(trace.len(), 101);
        assert!(trace[100] < trace[0], "{} -> {}", trace[0], trace[100]);
        assert!(model.assignments().iter().all(|&a| a == 0));
        let err = reconstruction_error(&model, &x).unwrap();
        assert!((err - trace[100]).abs() < 1e-9);
    }

    fn soft_check(seed: u64, objective: Objective) -> f64 {
        let mut rng = Rng::new(seed);
        let x = random(5, 4, 1.0, &mut rng);
        let params = vec![
            random(5, 3, 0.7, &mut rng),
            random(3, 4, 0.7, &mut rng),
            random(3, 4, 0.7, &mut rng),
            random(5, 2, 1.0, &mut rng),
        ];
        let noise = gumbel_matrix(5, 2, &mut rng);
        let tau = 0.8;
        let eval = |p: &[Matrix]| eq4_objective(&x, &p[0], &p[1..3], &p[3], &noise, tau, Relaxation::Soft, objective).unwrap();
        grad_check(
            |p| eval(p).loss,
            |p| {
                let g = eval(p);
                vec![g.f, g.g[0].clone(), g.g[1].clone(), g.z]
            },
            &params,
            1e-3,
        )
        .unwrap()
    }

    #[test]
    fn soft_path_gradients_match_finite_differences() {
        for seed in 0..5 {
            let err = soft_check(seed, Objective::Norm);
            assert!(err < 1e-4, "seed {seed}: {err}");
            let err = soft_check(seed, Objective::HalfSquared);
            assert!(err < 1e-4, "seed {seed}: {err}");
        }
    }

    #[test]
    fn straight_through_forward_is_one_hot() {
        let mut rng = Rng::new(6);
        let x = random(7, 4, 1.0, &mut rng);
        let f = random(7, 2, 1.0, &mut rng);
        let gs = vec![random(2, 4, 1.0, &mut rng), random(2, 4, 1.0, &mut rng), random(2, 4, 1.0, &mut rng)];
        let z = random(7, 3, 1.0, &mut rng);
        for _ in 0..20 {
            let noise = gumbel_matrix(7, 3, &mut rng);
            let out = eq4_objective(&x, &f, &gs, &z, &noise, 1.0, Relaxation::StraightThrough, Objective::Norm).unwrap();
            for row in out.forward_weights.chunks(3) {
                assert_eq!(row.iter().filter(|&&w| w == 1.0).count(), 1);
                assert_eq!(row.iter().filter(|&&w| w == 0.0).count(), 2);
            }
        }
    }

    #[test]
    fn straight_through_loss_is_hard_reconstruction() {
        let mut rng = Rng::new(2);
        let x = random(6, 4, 1.0, &mut rng);
        let f = random(6, 2, 1.0, &mut rng);
        let gs = vec![random(2, 4, 1.0, &mut rng), random(2, 4, 1.0, &mut rng)];
        let z = random(6, 2, 3.0, &mut rng);
        let zero_noise = Matrix::zeros(6, 2);
        let out = eq4_objective(&x, &f, &gs, &z, &zero_noise, 1.0, Relaxation::StraightThrough, Objective::Norm).unwrap();
        let expected = hard_loss(&x, &f, &gs, &argmax_rows(&z));
        assert!((out.loss - expected).abs() < 1e-12);
    }

    #[test]
    fn gradient_sums_do_not_depend_on_threads() {
        let mut rng = Rng::new(30);
        let x = random(50, 5, 1.0, &mut rng);
        let config = NeuralConfig {
            clusters: 3,
            d_prime: 2,
            steps: 5,
            ..NeuralConfig::default()
        };
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| factorize_neural(&x, &config, &mut Rng::new(1)).unwrap())
        };
        let (a, ta) = run(1);
        let (b, tb) = run(4);
        assert_eq!(a, b);
        assert_eq!(ta, tb);
    }

    #[test]
    fn multi_cluster_training_reduces_loss() {
        let mut rng = Rng::new(40);
        let x = random(30, 6, 1.0, &mut rng);
        let config = NeuralConfig {
            clusters: 3,
            d_prime: 2,
            steps: 300,
            tau: TauSchedule::annealed(),
            lr: 1e-2,
        };
        let (model, trace) = factorize_neural(&x, &config, &mut rng).unwrap();
        assert!(trace.last().unwrap() < &trace[0]);
        assert!(model.logits().is_some());
        assert_eq!(model.meta().lr, Some(1e-2));
        assert_eq!(model.meta().tau, TauSchedule::annealed());
    }

    #[test]
    fn divergence_names_the_step() {
        let mut rng = Rng::new(1);
        let x = random(10, 6, 100.0, &mut rng);
        let config = NeuralConfig {
            clusters: 2,
            d_prime: 3,
            steps: 200,
            lr: 10.0,
            ..NeuralConfig::default()
        };
        match factorize_neural(&x, &config, &mut rng) {
            Err(Error::Divergence { step, .. }) => assert!(step < 200),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn config_errors() {
        let x = Matrix::zeros(3, 3);
        let bad = [
            NeuralConfig { clusters: 0, ..NeuralConfig::default() },
            NeuralConfig { lr: 0.0, ..NeuralConfig::default() },
            NeuralConfig { tau: TauSchedule::constant(0.0), ..NeuralConfig::default() },
        ];
        for config in bad {
            assert!(factorize_neural(&x, &config, &mut Rng::new(0)).is_err());
        }
    }
}
