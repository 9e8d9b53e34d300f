//! Multimodal hierarchical encoder-decoder toolkit for dialogue response generation.
//!
//! The crate provides everything needed to train and evaluate text-response
//! models over text+image dialogue context at desk scale:
//!
//! - [`tensor`]: a minimal dense-tensor library with reverse-mode automatic
//!   differentiation (the only numeric engine used anywhere in the crate)
//! - [`rnn`]: GRU cells, masked sequence runners, and Luong-style attention
//! - [`model`]: the hierarchical encoder-decoder itself, from utterance
//!   encoder through per-turn image aggregation, context encoder, and
//!   attention decoder to likelihood scoring and greedy/beam generation
//! - [`data`]: transcript parsing, context extraction (aggregated and
//!   unrolled), vocabulary, image feature store, and synthetic corpora
//! - [`train`]: Adam with global-norm gradient clipping, early stopping,
//!   and checkpointing
//! - [`eval`]: sentence-level BLEU-4, METEOR-lite, ROUGE-L, and paired
//!   bootstrap resampling
//! - [`gradcheck`]: finite-difference gradient verification utilities

pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod model;
pub mod rnn;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
