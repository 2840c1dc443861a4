//! Initializing embeddings for a new vocabulary from a pretrained model,
//! fitting new-language factors against a target matrix, and the bottleneck
//! adapter layer.

mod adapter;
mod stack;

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factorization::neural::{descend, UpProjections};
use crate::factorization::{FactorizationModel, Method, TauSchedule};
use crate::numerics::{argmax, Matrix, Rng};
use crate::overlap::lexical_overlap;
use crate::vocab::Vocabulary;

pub use adapter::{adapter_backward_check, adapter_forward, adapter_gradients, AdapterGrads, gelu, gelu_derivative, AdapterLayer};
pub use stack::{madx_stack_config, StackConfig, Variant};

/// Standard deviation of randomly initialized rows.
pub const DEFAULT_RAND_STDDEV: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    ElRand,
    ElLex,
    MfRand,
    MfLex,
}

impl Strategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::ElRand => "el-rand",
            Strategy::ElLex => "el-lex",
            Strategy::MfRand => "mf-rand",
            Strategy::MfLex => "mf-lex",
        }
    }

    pub fn is_factorized(self) -> bool {
        matches!(self, Strategy::MfRand | Strategy::MfLex)
    }

    fn copies_overlap(self) -> bool {
        matches!(self, Strategy::ElLex | Strategy::MfLex)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitSpec {
    pub strategy: Strategy,
    pub rand_stddev: f64,
    pub seed: u64,
}

impl InitSpec {
    pub fn new(strategy: Strategy, seed: u64) -> Self {
        InitSpec {
            strategy,
            rand_stddev: DEFAULT_RAND_STDDEV,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rand_stddev > 0.0 && self.rand_stddev.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "rand_stddev must be positive, got {}",
                self.rand_stddev
            )));
        }
        Ok(())
    }
}

/// `(new id, base id)` for every row copied from the base model: the new
/// vocabulary's special tokens always, plus lexically overlapping tokens when
/// the strategy asks for it.
fn copied_rows(new_vocab: &Vocabulary, base_vocab: &Vocabulary, strategy: Strategy) -> Result<Vec<(usize, usize)>> {
    let mut pairs = Vec::new();
    for s in new_vocab.specials() {
        let base_id = base_vocab.id(s).ok_or_else(|| Error::MissingSpecial(s.clone()))?;
        pairs.push((new_vocab.id(s).expect("specials are in the vocabulary"), base_id));
    }
    if strategy.copies_overlap() {
        let overlap = lexical_overlap(new_vocab, base_vocab);
        for t in &overlap.tokens {
            pairs.push((new_vocab.id(t).expect("overlap comes from the new vocabulary"), base_vocab.id(t).expect("and the base")));
        }
    }
    pairs.sort_unstable();
    Ok(pairs)
}

/// Full-dimensional embeddings for `new_vocab`. Rows of special tokens (and,
/// for EL-lex, of overlapping tokens) are copied from `base_x`; the rest are
/// drawn from `N(0, rand_stddev²)`.
pub fn init_embeddings_el(
    new_vocab: &Vocabulary,
    base_vocab: &Vocabulary,
    base_x: &Matrix,
    spec: &InitSpec,
) -> Result<Matrix> {
    spec.validate()?;
    if spec.strategy.is_factorized() {
        return Err(Error::InvalidArgument(format!(
            "{} needs a factorized base model",
            spec.strategy.as_str()
        )));
    }
    if base_x.rows() != base_vocab.len() {
        return Err(Error::shape(format!(
            "base embeddings have {} rows for {} tokens",
            base_x.rows(),
            base_vocab.len()
        )));
    }
    let pairs = copied_rows(new_vocab, base_vocab, spec.strategy)?;
    // every row is drawn, copied or not, so random rows do not depend on the
    // strategy
    let mut rng = Rng::new(spec.seed);
    let mut out = Matrix::from_fn(new_vocab.len(), base_x.cols(), |_, _| {
        rng.normal(0.0, spec.rand_stddev) as f32
    });
    for (new_id, base_id) in pairs {
        out.row_mut(new_id).copy_from_slice(base_x.row(base_id));
    }
    Ok(out)
}

/// Low-dimensional factors and assignment logits for `new_vocab`, sharing
/// the base model's up-projections.
///
/// `F′` and `Z′` are drawn from `N(0, rand_stddev²)`. Copied tokens (specials,
/// and for MF-lex the overlapping tokens) take their base `F` row, and their
/// logit for the base cluster is raised to the row maximum plus
/// `3·rand_stddev` so the assignment carries over.
pub fn init_embeddings_mf(
    new_vocab: &Vocabulary,
    base_vocab: &Vocabulary,
    base_model: &FactorizationModel,
    spec: &InitSpec,
) -> Result<FactorizationModel> {
    spec.validate()?;
    if !spec.strategy.is_factorized() {
        return Err(Error::InvalidArgument(format!(
            "{} does not use a factorized model",
            spec.strategy.as_str()
        )));
    }
    if base_model.num_tokens() != base_vocab.len() {
        return Err(Error::shape(format!(
            "base model has {} token factors for {} tokens",
            base_model.num_tokens(),
            base_vocab.len()
        )));
    }
    let pairs = copied_rows(new_vocab, base_vocab, spec.strategy)?;
    let n = new_vocab.len();
    let d_prime = base_model.d_prime();
    let clusters = base_model.clusters();
    let sd = spec.rand_stddev;

    let mut rng = Rng::new(spec.seed);
    let mut f = Matrix::from_fn(n, d_prime, |_, _| rng.normal(0.0, sd) as f32);
    let mut z = Matrix::from_fn(n, clusters, |_, _| rng.normal(0.0, sd) as f32);
    for (new_id, base_id) in pairs {
        f.row_mut(new_id).copy_from_slice(base_model.factors().row(base_id));
        let row = z.row_mut(new_id);
        let top = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        row[base_model.assignments()[base_id]] = (f64::from(top) + 3.0 * sd) as f32;
    }
    let assignments = (0..n).map(|v| argmax(z.row(v))).collect();

    let mut meta = base_model.meta().clone();
    meta.method = if spec.strategy == Strategy::MfLex {
        Method::MfLex
    } else {
        Method::MfRand
    };
    meta.steps = 0;
    meta.step_unit = "gradient step".into();
    meta.seed = spec.seed;
    meta.lr = None;
    meta.vocab_hash = None;
    FactorizationModel::new(f, base_model.shared_up_projections(), assignments, Some(z), meta)
}

/// Rows of `new_vocab` copied from the base under `strategy`.
pub fn copied_token_ids(new_vocab: &Vocabulary, base_vocab: &Vocabulary, strategy: Strategy) -> Result<HashSet<usize>> {
    Ok(copied_rows(new_vocab, base_vocab, strategy)?
        .into_iter()
        .map(|(new_id, _)| new_id)
        .collect())
}

/// Trains the factors and assignment logits of `model` against `x_target`
/// with the up-projections frozen. Uses the same optimizer as neural
/// factorization: plain gradient descent with straight-through Gumbel-Softmax
/// assignments. The loss trace holds `‖X_target − reconstruct‖_F` at the
/// start and after every step.
pub fn fit_target(
    model: &FactorizationModel,
    x_target: &Matrix,
    steps: usize,
    lr: f64,
    tau: TauSchedule,
    rng: &mut Rng,
) -> Result<(FactorizationModel, Vec<f64>)> {
    if x_target.shape() != (model.num_tokens(), model.dim()) {
        return Err(Error::shape(format!(
            "target is {:?}, model reconstructs {:?}",
            x_target.shape(),
            (model.num_tokens(), model.dim())
        )));
    }
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(Error::InvalidArgument(format!("learning rate must be positive, got {lr}")));
    }
    tau.validate()?;
    if !x_target.is_finite() {
        return Err(Error::NonFinite("fit_target input"));
    }
    let Some(z0) = model.logits() else {
        return Err(Error::InvalidArgument(
            "model has no assignment logits; initialize it with init_embeddings_mf".into(),
        ));
    };
    let mut f = model.factors().clone();
    let mut z = z0.clone();
    let trace = descend(
        x_target,
        &mut f,
        UpProjections::Frozen(model.up_projections()),
        &mut z,
        steps,
        tau,
        lr,
        rng,
    )?;
    let mut meta = model.meta().clone();
    meta.steps += steps;
    meta.tau = tau;
    meta.lr = Some(lr);
    let assignments = (0..z.rows()).map(|v| argmax(z.row(v))).collect();
    let fitted = FactorizationModel::new(f, model.shared_up_projections(), assignments, Some(z), meta)?;
    Ok((fitted, trace))
}
