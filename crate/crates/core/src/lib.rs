//! EEG-to-text decoding with a transformer encoder whose feed-forward
//! activation is the experimental variable.
//!
//! - [`numerics`]: tensors, the autodiff tape, gradient checking
//! - [`activations`]: fixed, parametric and learnable-polynomial activations
//! - [`model`]: encoder, decoder, attention, beam search, checkpoints
//! - [`data`]: EEG averaging, interchange files, synthetic corpora, vocabulary, splits
//! - [`training`]: decoder LM pre-training and the two-stage protocol
//! - [`metrics`]: BLEU and ROUGE

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod activations;
pub mod data;
pub mod error;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod training;

pub use activations::{ActivationKind, ActivationSpec};
pub use error::{Error, Result};
pub use numerics::{ParamId, Tensor};
