//! Forward passes of the encoder and decoder, recorded on a [`Tape`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::activations::ActivationSpec;
use crate::data::vocab::BOS;
use crate::error::{Error, Result};
use crate::model::config::ModelConfig;
use crate::model::params::{AttentionIds, LinearIds, ModelParams, NormIds, ParamStore};
use crate::numerics::{Tape, Tensor, Var, LAYER_NORM_EPS};

/// Inverted dropout with its own seeded RNG; rate 0 is the identity.
#[derive(Debug, Clone)]
pub struct Dropout {
    rate: f64,
    rng: ChaCha8Rng,
}

impl Dropout {
    pub fn new(rate: f64, seed: u64) -> Self {
        Self {
            rate,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn disabled() -> Self {
        Self::new(0.0, 0)
    }

    pub fn apply(&mut self, tape: &mut Tape<'_>, x: Var) -> Result<Var> {
        if self.rate <= 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - self.rate);
        let shape = tape.value(x).shape().to_vec();
        let len = tape.value(x).len();
        let mask = (0..len)
            .map(|_| {
                if self.rng.random::<f64>() < self.rate {
                    0.0
                } else {
                    keep
                }
            })
            .collect();
        let mask = tape.constant(Tensor::new(shape, mask)?);
        tape.mul(x, mask)
    }
}

/// Fixed sinusoidal position table of shape `[len, dim]`.
pub fn positional_encoding(len: usize, dim: usize) -> Tensor {
    let mut data = vec![0.0; len * dim];
    for pos in 0..len {
        for i in 0..dim {
            let freq = 1.0 / 10000f64.powf((2 * (i / 2)) as f64 / dim as f64);
            let angle = pos as f64 * freq;
            data[pos * dim + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    Tensor::new(vec![len, dim], data).expect("shape matches")
}

fn linear<'a>(tape: &mut Tape<'a>, store: &'a ParamStore, ids: LinearIds, x: Var) -> Result<Var> {
    let w = store.var(tape, ids.w);
    let b = store.var(tape, ids.b);
    let y = tape.matmul(x, w)?;
    tape.add_row(y, b)
}

fn norm<'a>(tape: &mut Tape<'a>, store: &'a ParamStore, ids: NormIds, x: Var) -> Result<Var> {
    let g = store.var(tape, ids.gain);
    let b = store.var(tape, ids.bias);
    tape.layer_norm(x, g, b, LAYER_NORM_EPS)
}

/// Keep-mask of shape `[queries, keys]` combining key padding and causality.
/// `None` means every entry is visible.
pub fn attention_mask(queries: usize, keys: usize, key_keep: Option<&[bool]>, causal: bool) -> Option<Vec<bool>> {
    if key_keep.is_none_or(|k| k.iter().all(|&v| v)) && !causal {
        return None;
    }
    let mut mask = vec![true; queries * keys];
    for i in 0..queries {
        for j in 0..keys {
            let visible = key_keep.is_none_or(|k| k[j]) && (!causal || j <= i);
            mask[i * keys + j] = visible;
        }
    }
    Some(mask)
}

pub struct AttentionOutput {
    pub output: Var,
    /// Per-head attention weights, `[queries, keys]` each.
    pub weights: Vec<Var>,
}

/// Multi-head scaled dot-product attention of `query` rows over `memory` rows.
pub fn multi_head_attention<'a>(
    tape: &mut Tape<'a>,
    store: &'a ParamStore,
    ids: &AttentionIds,
    query: Var,
    memory: Var,
    heads: usize,
    keep: Option<&[bool]>,
) -> Result<AttentionOutput> {
    let dim = tape.value(query).cols();
    if heads == 0 || !dim.is_multiple_of(heads) {
        return Err(Error::Dimension {
            op: "multi_head_attention",
            lhs: vec![dim],
            rhs: vec![heads],
        });
    }
    if tape.value(memory).cols() != dim {
        return Err(Error::Dimension {
            op: "multi_head_attention",
            lhs: tape.value(query).shape().to_vec(),
            rhs: tape.value(memory).shape().to_vec(),
        });
    }
    let head_dim = dim / heads;
    let scale = 1.0 / (head_dim as f64).sqrt();
    let q = linear(tape, store, ids.q, query)?;
    let k = linear(tape, store, ids.k, memory)?;
    let v = linear(tape, store, ids.v, memory)?;
    let mut outputs = Vec::with_capacity(heads);
    let mut weights = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = tape.slice_cols(q, h * head_dim, head_dim)?;
        let kh = tape.slice_cols(k, h * head_dim, head_dim)?;
        let vh = tape.slice_cols(v, h * head_dim, head_dim)?;
        let kt = tape.transpose(kh);
        let scores = tape.matmul(qh, kt)?;
        let scores = tape.scale(scores, scale);
        let attn = tape.softmax_rows(scores, keep.map(<[bool]>::to_vec))?;
        outputs.push(tape.matmul(attn, vh)?);
        weights.push(attn);
    }
    let joined = if heads == 1 {
        outputs[0]
    } else {
        tape.concat_cols(&outputs)?
    };
    let output = linear(tape, store, ids.o, joined)?;
    Ok(AttentionOutput { output, weights })
}

fn feed_forward<'a>(
    tape: &mut Tape<'a>,
    store: &'a ParamStore,
    ff1: LinearIds,
    ff2: LinearIds,
    activation: ActivationSpec,
    act_params: Option<Var>,
    x: Var,
) -> Result<Var> {
    let h = linear(tape, store, ff1, x)?;
    let a = tape.activation(activation, h, act_params)?;
    linear(tape, store, ff2, a)
}

/// Encodes one sentence of averaged word features `[words, input_dim]`.
/// `pad_mask[i]` is true for real positions.
pub fn encoder_forward<'a>(
    tape: &mut Tape<'a>,
    params: &'a ModelParams,
    config: &ModelConfig,
    features: &Tensor,
    pad_mask: &[bool],
    dropout: &mut Dropout,
) -> Result<Var> {
    let store = &params.store;
    if features.shape().len() != 2 || features.cols() != config.input_dim {
        return Err(Error::Dimension {
            op: "encoder_forward",
            lhs: features.shape().to_vec(),
            rhs: vec![config.input_dim],
        });
    }
    let words = features.rows();
    if pad_mask.len() != words {
        return Err(Error::Dimension {
            op: "encoder_forward pad_mask",
            lhs: vec![words],
            rhs: vec![pad_mask.len()],
        });
    }
    let keep = attention_mask(words, words, Some(pad_mask), false);
    let x = tape.constant(features.clone());
    let x = linear(tape, store, params.input, x)?;
    let pe = tape.constant(positional_encoding(words, config.model_dim));
    let x = tape.add(x, pe)?;
    let mut x = dropout.apply(tape, x)?;

    for layer in &params.encoder {
        let act = layer.act.map(|id| store.var(tape, id));
        if config.norm_first {
            let n = norm(tape, store, layer.norm1, x)?;
            let a = multi_head_attention(tape, store, &layer.attn, n, n, config.heads, keep.as_deref())?;
            let a = dropout.apply(tape, a.output)?;
            x = tape.add(x, a)?;
            let n = norm(tape, store, layer.norm2, x)?;
            let f = feed_forward(tape, store, layer.ff1, layer.ff2, config.activation, act, n)?;
            let f = dropout.apply(tape, f)?;
            x = tape.add(x, f)?;
        } else {
            let a = multi_head_attention(tape, store, &layer.attn, x, x, config.heads, keep.as_deref())?;
            let a = dropout.apply(tape, a.output)?;
            let r = tape.add(x, a)?;
            x = norm(tape, store, layer.norm1, r)?;
            let f = feed_forward(tape, store, layer.ff1, layer.ff2, config.activation, act, x)?;
            let f = dropout.apply(tape, f)?;
            let r = tape.add(x, f)?;
            x = norm(tape, store, layer.norm2, r)?;
        }
    }
    Ok(x)
}

/// Next-token logits `[prefix_len, vocab_size]` for a prefix starting with BOS.
pub fn decoder_forward<'a>(
    tape: &mut Tape<'a>,
    params: &'a ModelParams,
    config: &ModelConfig,
    encoder_out: Var,
    encoder_keep: Option<&[bool]>,
    prefix: &[usize],
    dropout: &mut Dropout,
) -> Result<Var> {
    let store = &params.store;
    if prefix.first() != Some(&BOS) {
        return Err(Error::Contract("decoder prefix must start with BOS".into()));
    }
    if prefix.len() > config.max_seq_len {
        return Err(Error::Contract(format!(
            "prefix length {} exceeds max_seq_len {}",
            prefix.len(),
            config.max_seq_len
        )));
    }
    let len = prefix.len();
    let mem_len = tape.value(encoder_out).rows();
    let self_keep = attention_mask(len, len, None, true);
    let cross_keep = attention_mask(len, mem_len, encoder_keep, false);

    let table = store.var(tape, params.embedding);
    let x = tape.gather_rows(table, prefix)?;
    let pe = tape.constant(positional_encoding(len, config.model_dim));
    let x = tape.add(x, pe)?;
    let mut x = dropout.apply(tape, x)?;
    let gelu = ActivationSpec::gelu();

    for layer in &params.decoder {
        let a = multi_head_attention(
            tape,
            store,
            &layer.self_attn,
            x,
            x,
            config.decoder_heads,
            self_keep.as_deref(),
        )?;
        let a = dropout.apply(tape, a.output)?;
        let r = tape.add(x, a)?;
        x = norm(tape, store, layer.norm1, r)?;
        let c = multi_head_attention(
            tape,
            store,
            &layer.cross_attn,
            x,
            encoder_out,
            config.decoder_heads,
            cross_keep.as_deref(),
        )?;
        let c = dropout.apply(tape, c.output)?;
        let r = tape.add(x, c)?;
        x = norm(tape, store, layer.norm2, r)?;
        let f = feed_forward(tape, store, layer.ff1, layer.ff2, gelu, None, x)?;
        let f = dropout.apply(tape, f)?;
        let r = tape.add(x, f)?;
        x = norm(tape, store, layer.norm3, r)?;
    }
    linear(tape, store, params.output, x)
}

/// Encoder output for inference (no dropout, every position real).
pub fn encode(params: &ModelParams, config: &ModelConfig, features: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let mask = vec![true; features.rows()];
    let out = encoder_forward(&mut tape, params, config, features, &mask, &mut Dropout::disabled())?;
    Ok(tape.value(out).clone())
}

/// Decoder logits for inference given a precomputed encoder output.
pub fn decode_logits(
    params: &ModelParams,
    config: &ModelConfig,
    encoder_out: &Tensor,
    prefix: &[usize],
) -> Result<Tensor> {
    let mut tape = Tape::new();
    let mem = tape.constant(encoder_out.clone());
    let out = decoder_forward(&mut tape, params, config, mem, None, prefix, &mut Dropout::disabled())?;
    Ok(tape.value(out).clone())
}

/// The context fed to cross-attention when the decoder is trained on text alone.
pub fn zero_context(config: &ModelConfig) -> Tensor {
    Tensor::zeros(&[1, config.model_dim])
}
