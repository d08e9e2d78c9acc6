//! Flat settings shared by flags and config files.
//!
//! Every flag has a key of the same name in the TOML config file
//! (`batch-size = 16`, `norm-first = true`, ...). Flags win over file values;
//! anything left unset falls back to the defaults in [`Settings::defaults`].

use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};

use eegtext_core::data::synthetic::SyntheticParams;
use eegtext_core::model::{GenerationConfig, ModelConfig};
use eegtext_core::training::TrainConfig;

use crate::CliError;

#[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct Settings {
    /// Interchange file (JSON lines) of sentences with per-word EEG recordings.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Use a generated synthetic corpus (the default when --data is absent).
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub synthetic: Option<bool>,
    /// Synthetic vocabulary size.
    #[arg(long)]
    pub vocab: Option<usize>,
    /// Synthetic sentence count.
    #[arg(long)]
    pub sentences: Option<usize>,
    /// Synthetic electrode count.
    #[arg(long)]
    pub electrodes: Option<usize>,
    /// Synthetic recording noise standard deviation.
    #[arg(long)]
    pub noise: Option<f64>,
    /// Shortest synthetic sentence, in words.
    #[arg(long)]
    pub min_words: Option<usize>,
    /// Longest synthetic sentence, in words.
    #[arg(long)]
    pub max_words: Option<usize>,

    /// Encoder feed-forward activation (relu, swish, gelu, elu, leaky_relu,
    /// prelu, sine, chebyshev2, chebyshev3, poly2, poly3, neg_pos_poly).
    #[arg(long)]
    pub activation: Option<String>,
    /// Pre-norm encoder layers.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub norm_first: Option<bool>,
    /// Use as many encoder attention heads as encoder layers.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub heads_same_as_layers: Option<bool>,
    /// Encoder layers.
    #[arg(long)]
    pub layers: Option<usize>,
    /// Encoder attention heads.
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub model_dim: Option<usize>,
    #[arg(long)]
    pub ff_dim: Option<usize>,
    #[arg(long)]
    pub decoder_layers: Option<usize>,
    #[arg(long)]
    pub decoder_heads: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
    /// Longest decoder input, in tokens.
    #[arg(long)]
    pub max_seq_len: Option<usize>,

    /// Epochs per training stage.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Decoder language-model pre-training epochs.
    #[arg(long)]
    pub lm_epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Learning rate of both training stages.
    #[arg(long)]
    pub lr: Option<f64>,
    /// Learning rate of decoder pre-training.
    #[arg(long)]
    pub lm_lr: Option<f64>,
    /// Global gradient-norm clip (0 disables).
    #[arg(long)]
    pub grad_clip: Option<f64>,

    /// Beam width used for generation.
    #[arg(long)]
    pub beam: Option<usize>,
    #[arg(long)]
    pub length_penalty: Option<f64>,
    /// Longest generated sentence, in tokens.
    #[arg(long)]
    pub max_gen_len: Option<usize>,

    /// Seeds data generation, the split, initialisation and training.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output path (a file for gen-synthetic, a directory otherwise).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Parallel sweep runs (default: available cores).
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Sweep rows by label or slug, comma separated (default: all fifteen).
    #[arg(long, value_delimiter = ',')]
    pub rows: Option<Vec<String>>,
}

macro_rules! overlay_fields {
    ($base:ident, $top:ident; $($f:ident),* $(,)?) => {
        Settings { $($f: $top.$f.or($base.$f)),* }
    };
}

impl Settings {
    /// Values of `top` where set, otherwise those of `self`.
    pub fn overlay(self, top: Settings) -> Settings {
        let base = self;
        overlay_fields!(base, top;
            data, synthetic, vocab, sentences, electrodes, noise, min_words, max_words,
            activation, norm_first, heads_same_as_layers, layers, heads, model_dim, ff_dim,
            decoder_layers, decoder_heads, dropout, max_seq_len,
            epochs, lm_epochs, batch_size, lr, lm_lr, grad_clip,
            beam, length_penalty, max_gen_len, seed, out, jobs, rows,
        )
    }

    /// Every setting at its default value. `data`, `out` and `rows` stay unset.
    pub fn defaults() -> Settings {
        let s = SyntheticParams::default();
        let m = ModelConfig::default();
        let t = TrainConfig::default();
        let g = GenerationConfig::default();
        Settings {
            data: None,
            synthetic: None,
            vocab: Some(s.vocab_size),
            sentences: Some(s.n_sentences),
            electrodes: Some(s.electrodes),
            noise: Some(s.noise_std),
            min_words: Some(s.min_len),
            max_words: Some(s.max_len),
            activation: Some(m.activation.to_string()),
            norm_first: Some(m.norm_first),
            heads_same_as_layers: Some(m.heads_same_as_layers),
            layers: Some(m.encoder_layers),
            heads: Some(m.heads),
            model_dim: Some(m.model_dim),
            ff_dim: Some(m.ff_dim),
            decoder_layers: Some(m.decoder_layers),
            decoder_heads: Some(m.decoder_heads),
            dropout: Some(m.dropout_rate),
            max_seq_len: Some(m.max_seq_len),
            epochs: Some(t.epochs_per_stage),
            lm_epochs: Some(t.lm_pretrain_epochs),
            batch_size: Some(t.batch_size),
            lr: Some(t.learning_rate),
            lm_lr: Some(t.lm_learning_rate),
            grad_clip: Some(t.grad_clip_norm),
            beam: Some(g.beam_width),
            length_penalty: Some(g.length_penalty),
            max_gen_len: Some(g.max_len),
            seed: Some(SyntheticParams::default().seed),
            out: None,
            jobs: None,
            rows: None,
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Settings, CliError> {
        toml::from_str(text).map_err(|e| CliError::Usage(format!("config file: {e}")))
    }

    pub fn from_file(path: &Path) -> Result<Settings, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    /// Defaults, then the config file (if any), then flags.
    pub fn layered(config: Option<&Path>, flags: Settings) -> Result<Settings, CliError> {
        let file = match config {
            Some(p) => Self::from_file(p)?,
            None => Settings::default(),
        };
        Ok(Self::defaults().overlay(file).overlay(flags))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("flat settings always serialize")
    }
}
