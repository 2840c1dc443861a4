//! Low-rank factorization of an embedding matrix into per-token factors and
//! one or more shared up-projections:
//!
//! ```text
//! X ≈ Σ_c diag(i_c) · F · G^c
//! ```
//!
//! where `i_c` is the 0/1 indicator of tokens assigned to cluster `c`. Three
//! engines produce such models: plain Semi-NMF (one cluster), KMeans followed
//! by per-cluster Semi-NMF, and joint gradient training with Gumbel-Softmax
//! cluster assignments.

mod budget;
pub(crate) mod io;
pub(crate) mod neural;
mod pipeline;
mod semi_nmf;

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{argmax, Matrix};
use crate::overlap::token_script;
use crate::vocab::Vocabulary;

pub use budget::{param_budget, BudgetMode, ParamBudget};
pub use io::{read_model, write_model, StoredModel, MODEL_MAGIC, MODEL_VERSION};
pub use neural::{eq4_objective, factorize_neural, NeuralConfig, Objective, ObjectiveGrads, Relaxation};
pub use pipeline::{factorize_kmeans, KMEANS_MAX_ITERS};
pub use semi_nmf::{semi_nmf, SemiNmf, SEMI_NMF_EPSILON, SEMI_NMF_INIT_STDDEV};

/// Embedding dimensionality of the low-rank factors used in the experiments.
pub const DEFAULT_D_PRIME: usize = 100;
/// Semi-NMF alternation steps used in the experiments.
pub const DEFAULT_STEPS: usize = 3000;
pub const DEFAULT_CLUSTERS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    SemiNmf,
    Kmeans,
    Neural,
    MfRand,
    MfLex,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::SemiNmf => "semi-nmf",
            Method::Kmeans => "kmeans",
            Method::Neural => "neural",
            Method::MfRand => "mf-rand",
            Method::MfLex => "mf-lex",
        }
    }
}

/// Linear temperature schedule from `start` (first step) to `end` (last step).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TauSchedule {
    pub start: f64,
    pub end: f64,
}

impl TauSchedule {
    pub const fn constant(tau: f64) -> Self {
        TauSchedule { start: tau, end: tau }
    }

    /// Anneals from 1.0 to 0.1.
    pub const fn annealed() -> Self {
        TauSchedule { start: 1.0, end: 0.1 }
    }

    pub fn at(&self, step: usize, total: usize) -> f64 {
        if total <= 1 {
            return self.start;
        }
        let frac = step as f64 / (total - 1) as f64;
        self.start + (self.end - self.start) * frac
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.start > 0.0 && self.end > 0.0) || !self.start.is_finite() || !self.end.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "temperatures must be positive, got {} -> {}",
                self.start, self.end
            )));
        }
        Ok(())
    }
}

impl Default for TauSchedule {
    fn default() -> Self {
        TauSchedule::constant(1.0)
    }
}

/// Provenance recorded with every model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub method: Method,
    pub d_prime: usize,
    pub clusters: usize,
    pub dim: usize,
    /// Training steps; for Semi-NMF one step is one F update plus one G update.
    pub steps: usize,
    pub step_unit: String,
    pub seed: u64,
    pub tau: TauSchedule,
    pub lr: Option<f64>,
    pub vocab_hash: Option<String>,
}

impl ModelMeta {
    pub fn new(method: Method, d_prime: usize, clusters: usize, dim: usize, steps: usize, seed: u64) -> Self {
        let step_unit = match method {
            Method::SemiNmf | Method::Kmeans => "alternation (F update + G update)",
            _ => "gradient step",
        };
        ModelMeta {
            method,
            d_prime,
            clusters,
            dim,
            steps,
            step_unit: step_unit.to_owned(),
            seed,
            tau: TauSchedule::default(),
            lr: None,
            vocab_hash: None,
        }
    }
}

/// Token factors `F` (|V|×D′), up-projections `G^c` (D′×D each), hard cluster
/// assignments and, for models trained with Gumbel-Softmax, the assignment
/// logits `Z` (|V|×C).
///
/// Up-projections sit behind an `Arc` so models derived for a new vocabulary
/// share them with the base model without copying.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorizationModel {
    factors: Matrix,
    up_projections: Arc<Vec<Matrix>>,
    assignments: Vec<usize>,
    logits: Option<Matrix>,
    meta: ModelMeta,
}

impl FactorizationModel {
    pub fn new(
        factors: Matrix,
        up_projections: Arc<Vec<Matrix>>,
        assignments: Vec<usize>,
        logits: Option<Matrix>,
        mut meta: ModelMeta,
    ) -> Result<Self> {
        let clusters = up_projections.len();
        let Some(first) = up_projections.first() else {
            return Err(Error::InvalidArgument("model needs at least one up-projection".into()));
        };
        let (d_prime, dim) = first.shape();
        if up_projections.iter().any(|g| g.shape() != (d_prime, dim)) {
            return Err(Error::shape("up-projections differ in shape"));
        }
        if factors.cols() != d_prime {
            return Err(Error::shape(format!(
                "factors have {} columns but up-projections {d_prime} rows",
                factors.cols()
            )));
        }
        if assignments.len() != factors.rows() {
            return Err(Error::shape(format!(
                "{} assignments for {} tokens",
                assignments.len(),
                factors.rows()
            )));
        }
        if let Some(&bad) = assignments.iter().find(|&&a| a >= clusters) {
            return Err(Error::InvalidArgument(format!("assignment {bad} outside 0..{clusters}")));
        }
        if let Some(z) = &logits {
            if z.shape() != (factors.rows(), clusters) {
                return Err(Error::shape(format!(
                    "logits are {:?}, expected {:?}",
                    z.shape(),
                    (factors.rows(), clusters)
                )));
            }
            if (0..z.rows()).any(|v| argmax(z.row(v)) != assignments[v]) {
                return Err(Error::InvalidArgument("assignments disagree with argmax of logits".into()));
            }
        }
        meta.d_prime = d_prime;
        meta.clusters = clusters;
        meta.dim = dim;
        Ok(FactorizationModel {
            factors,
            up_projections,
            assignments,
            logits,
            meta,
        })
    }

    pub fn factors(&self) -> &Matrix {
        &self.factors
    }

    pub fn up_projections(&self) -> &[Matrix] {
        &self.up_projections
    }

    pub fn shared_up_projections(&self) -> Arc<Vec<Matrix>> {
        Arc::clone(&self.up_projections)
    }

    pub fn assignments(&self) -> &[usize] {
        &self.assignments
    }

    pub fn logits(&self) -> Option<&Matrix> {
        self.logits.as_ref()
    }

    pub fn meta(&self) -> &ModelMeta {
        &self.meta
    }

    pub fn meta_mut(&mut self) -> &mut ModelMeta {
        &mut self.meta
    }

    pub fn num_tokens(&self) -> usize {
        self.factors.rows()
    }

    pub fn d_prime(&self) -> usize {
        self.factors.cols()
    }

    pub fn dim(&self) -> usize {
        self.up_projections[0].cols()
    }

    pub fn clusters(&self) -> usize {
        self.up_projections.len()
    }

    /// Row `v` of the reconstruction: `F_v · G^{assignment(v)}`.
    pub fn reconstruct_row(&self, v: usize) -> Vec<f64> {
        Matrix::vec_mul(self.factors.row(v), &self.up_projections[self.assignments[v]])
    }
}

/// The approximated embedding matrix. Since the indicator rows are one-hot,
/// each row only touches its own cluster's up-projection.
pub fn reconstruct(model: &FactorizationModel) -> Matrix {
    let mut out = Matrix::zeros(model.num_tokens(), model.dim());
    for v in 0..model.num_tokens() {
        let row = model.reconstruct_row(v);
        for (o, x) in out.row_mut(v).iter_mut().zip(row) {
            *o = x as f32;
        }
    }
    out
}

/// `‖X − reconstruct(model)‖_F`.
pub fn reconstruction_error(model: &FactorizationModel, x: &Matrix) -> Result<f64> {
    if x.shape() != (model.num_tokens(), model.dim()) {
        return Err(Error::shape(format!(
            "X is {:?} but the model reconstructs {:?}",
            x.shape(),
            (model.num_tokens(), model.dim())
        )));
    }
    let mut total = 0.0f64;
    for v in 0..model.num_tokens() {
        let row = model.reconstruct_row(v);
        total += x
            .row(v)
            .iter()
            .zip(row)
            .map(|(&a, b)| (f64::from(a) - b).powi(2))
            .sum::<f64>();
    }
    Ok(total.sqrt())
}

/// Member counts per Unicode script for every cluster. Special tokens are
/// skipped; each other token counts once, under its majority script.
pub fn cluster_script_report(model: &FactorizationModel, vocab: &Vocabulary) -> Result<Vec<BTreeMap<String, usize>>> {
    if model.num_tokens() != vocab.len() {
        return Err(Error::shape(format!(
            "model has {} tokens, vocabulary {}",
            model.num_tokens(),
            vocab.len()
        )));
    }
    let mut report = vec![BTreeMap::new(); model.clusters()];
    for (id, token) in vocab.non_special() {
        *report[model.assignments()[id]]
            .entry(token_script(token).to_owned())
            .or_insert(0) += 1;
    }
    Ok(report)
}

#[cfg(test)]
pub(crate) fn single_cluster_model(f: Matrix, g: Matrix) -> FactorizationModel {
    let n = f.rows();
    let meta = ModelMeta::new(Method::SemiNmf, f.cols(), 1, g.cols(), 0, 0);
    FactorizationModel::new(f, Arc::new(vec![g]), vec![0; n], None, meta).unwrap()
}
