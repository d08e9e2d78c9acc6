//! The encoder-decoder: configuration, parameters, forward passes,
//! generation and checkpoints.

pub mod checkpoint;
pub mod config;
pub mod generation;
pub mod network;
pub mod params;

pub use checkpoint::Checkpoint;
pub use config::ModelConfig;
pub use generation::{beam_search, greedy_decode, Hypothesis, ModelScorer, NextTokenScorer};
pub use network::{decode_logits, decoder_forward, encode, encoder_forward, multi_head_attention, Dropout};
pub use params::{ModelParams, ParamStore};

use crate::error::Result;
use crate::numerics::Tensor;

/// Beam settings used when turning EEG features into a sentence.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GenerationConfig {
    pub beam_width: usize,
    pub max_len: usize,
    pub length_penalty: f64,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            beam_width: 5,
            max_len: 32,
            length_penalty: 1.0,
        }
    }
}

/// Encodes `features` and beam-searches a token sequence from the decoder.
pub fn generate(
    params: &ModelParams,
    config: &ModelConfig,
    features: &Tensor,
    gen: &GenerationConfig,
) -> Result<Hypothesis> {
    let scorer = ModelScorer {
        params,
        config,
        encoder_out: encode(params, config, features)?,
    };
    let max_len = gen.max_len.min(config.max_seq_len).max(1);
    beam_search(&scorer, gen.beam_width, max_len, gen.length_penalty)
}
