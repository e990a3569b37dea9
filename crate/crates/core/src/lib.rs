//! Fleeting-memory transformers.
//!
//! Decoder-only language models whose self-attention is attenuated by a
//! fixed power-law retention bias with an echoic buffer, together with the
//! tooling to train paired runs and evaluate them: minimal-pair
//! acceptability, surprisal-based reading-time regression, frequency
//! stratified error analysis and bootstrap statistics.

// `!(x > 0.0)` also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attention;
pub mod data;
pub mod io;
pub mod minimal_pairs;
pub mod tokenizer;
pub mod error;
pub mod freq_analysis;
pub mod model;
pub mod plot;
pub mod retention;
pub mod rng;
pub mod stats;
pub mod surprisal_rt;
pub mod training;

pub use error::{Error, Result};
pub use model::{cross_entropy_loss, init_model, param_count, ModelConfig, ModelState, Sampling};
pub use retention::{
    build_bias_matrix, condition_to_retention, retention_value, BiasMatrix, Condition,
    RetentionConfig,
};
