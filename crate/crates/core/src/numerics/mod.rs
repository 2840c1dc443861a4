//! Dense kernels and small numerical routines shared by the rest of the crate.
//!
//! Storage is `f32`; every reduction and product accumulates in `f64`.

mod gradcheck;
mod gumbel;
mod kmeans;
mod linalg;
mod matrix;
mod rng;
mod stats;

pub use gradcheck::{grad_check, GRAD_CHECK_ABS_FLOOR};
pub use gumbel::{argmax, gumbel_softmax, gumbel_softmax_with_noise, sample_gumbel, softmax_backward, GumbelSample};
pub use kmeans::{kmeans, KMeansResult};
pub use linalg::{pseudo_inverse_sym, solve_f_step, solve_f_step_f64};
pub use matrix::Matrix;
pub use rng::Rng;
pub use stats::pearson_correlation;
