//! Adapting a pretrained embedding matrix to a new vocabulary.
//!
//! The crate measures how well a base vocabulary covers a target vocabulary,
//! factorizes the base embedding matrix into low-dimensional token factors
//! with shared up-projections, and initializes new-language embeddings from
//! those factors.

pub mod adaptation;
pub mod cli;
pub mod error;
pub mod factorization;
pub mod formats;
pub mod numerics;
pub mod overlap;
pub mod vocab;

pub use error::{Error, Result};
