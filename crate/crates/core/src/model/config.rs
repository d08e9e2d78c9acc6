use serde::{Deserialize, Serialize};

use crate::activations::ActivationSpec;
use crate::data::vocab::NUM_SPECIALS;
use crate::error::{Error, Result};

/// Architecture of the encoder-decoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Width of one averaged word feature vector (electrode count).
    pub input_dim: usize,
    pub encoder_layers: usize,
    pub model_dim: usize,
    /// Encoder attention heads.
    pub heads: usize,
    pub ff_dim: usize,
    /// Activation of the encoder feed-forward blocks; the decoder always uses gelu.
    pub activation: ActivationSpec,
    pub norm_first: bool,
    pub heads_same_as_layers: bool,
    pub decoder_layers: usize,
    pub decoder_heads: usize,
    pub vocab_size: usize,
    pub max_seq_len: usize,
    pub dropout_rate: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_dim: 105,
            encoder_layers: 6,
            model_dim: 128,
            heads: 8,
            ff_dim: 512,
            activation: ActivationSpec::relu(),
            norm_first: false,
            heads_same_as_layers: false,
            decoder_layers: 2,
            decoder_heads: 8,
            vocab_size: 64,
            max_seq_len: 64,
            dropout_rate: 0.1,
        }
    }
}

impl ModelConfig {
    /// Applies `heads_same_as_layers` by setting the encoder head count.
    pub fn resolved(mut self) -> Self {
        if self.heads_same_as_layers {
            self.heads = self.encoder_layers;
        }
        self
    }

    /// Checks every invariant and reports all violations together.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.encoder_layers < 1 {
            problems.push("encoder_layers must be >= 1".to_string());
        }
        if self.decoder_layers < 1 {
            problems.push("decoder_layers must be >= 1".to_string());
        }
        if self.input_dim < 1 {
            problems.push("input_dim must be >= 1".to_string());
        }
        if self.vocab_size < NUM_SPECIALS {
            problems.push(format!("vocab_size must be >= {NUM_SPECIALS}, got {}", self.vocab_size));
        }
        if self.heads == 0 || !self.model_dim.is_multiple_of(self.heads) {
            problems.push(format!(
                "model_dim {} is not divisible by heads {}",
                self.model_dim, self.heads
            ));
        }
        if self.decoder_heads == 0 || !self.model_dim.is_multiple_of(self.decoder_heads) {
            problems.push(format!(
                "model_dim {} is not divisible by decoder_heads {}",
                self.model_dim, self.decoder_heads
            ));
        }
        if self.heads_same_as_layers && self.heads != self.encoder_layers {
            problems.push(format!(
                "heads_same_as_layers requires heads == encoder_layers ({} != {})",
                self.heads, self.encoder_layers
            ));
        }
        if self.ff_dim < 1 {
            problems.push("ff_dim must be >= 1".to_string());
        }
        if self.max_seq_len < 2 {
            problems.push("max_seq_len must be >= 2".to_string());
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            problems.push(format!("dropout_rate must lie in [0, 1), got {}", self.dropout_rate));
        }
        if let Err(Error::Config(p)) = self.activation.validate() {
            problems.extend(p);
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        ModelConfig::default().validate().unwrap();
    }

    #[test]
    fn all_problems_reported() {
        let cfg = ModelConfig {
            model_dim: 30,
            heads: 4,
            vocab_size: 2,
            encoder_layers: 0,
            ..Default::default()
        };
        let Err(Error::Config(problems)) = cfg.validate() else {
            panic!("expected config error")
        };
        assert_eq!(problems.len(), 4, "{problems:?}");
    }

    #[test]
    fn heads_same_as_layers_sets_heads() {
        let cfg = ModelConfig {
            heads_same_as_layers: true,
            model_dim: 132,
            decoder_heads: 4,
            ..Default::default()
        }
        .resolved();
        assert_eq!(cfg.heads, 6);
        cfg.validate().unwrap();

        let unresolved = ModelConfig {
            heads_same_as_layers: true,
            ..Default::default()
        };
        assert!(unresolved.validate().is_err());
    }
}
