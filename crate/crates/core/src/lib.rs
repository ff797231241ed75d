//! Location-based attention for recurrent sequence-to-sequence models.
//!
//! The crate bundles a small reverse-mode autodiff core ([`numcore`]), the
//! content, positional, Gaussian location and mixed attenders
//! ([`attention`]), a GRU encoder-decoder ([`seq2seq`]), generators for the
//! long lookup-table benchmarks ([`tasks`]), evaluation metrics
//! ([`metrics`]) and the training loop ([`training`]).

pub mod attention;
pub mod error;
pub mod metrics;
pub mod numcore;
pub mod seq2seq;
pub mod tasks;
pub mod training;

pub use error::{Error, Result};
