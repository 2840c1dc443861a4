use serde::{Deserialize, Serialize};

/// Which parameters a new language trains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BudgetMode {
    /// A full `V′×D` embedding matrix.
    El,
    /// Low-dimensional factors `V′×D′` plus assignment logits `V′×C`; the
    /// up-projections are shared and not counted.
    Mf,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamBudget {
    pub trainable_new_params: u64,
    /// `(tensor, count)` pairs summing to the total.
    pub breakdown: Vec<(String, u64)>,
}

/// Number of new trainable parameters for a vocabulary of `v_new` tokens.
pub fn param_budget(v_new: u64, d: u64, d_prime: u64, c: u64, mode: BudgetMode) -> ParamBudget {
    let breakdown = match mode {
        BudgetMode::El => vec![("embeddings".to_owned(), v_new * d)],
        BudgetMode::Mf => vec![
            ("factors".to_owned(), v_new * d_prime),
            ("assignment_logits".to_owned(), v_new * c),
        ],
    };
    ParamBudget {
        trainable_new_params: breakdown.iter().map(|(_, n)| n).sum(),
        breakdown,
    }
}
