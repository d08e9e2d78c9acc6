//! Named parameter storage and the parameter layout of the encoder-decoder.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::activations::{init_params, POLY_INIT_NOISE};
use crate::error::{Error, Result};
use crate::model::config::ModelConfig;
use crate::numerics::{ParamId, Tape, Tensor, Var};

#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub value: Tensor,
    pub frozen: bool,
}

/// Ordered collection of named tensors with per-parameter freeze flags.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
    index: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::Contract(format!("duplicate parameter `{name}`")));
        }
        let id = ParamId(self.entries.len());
        self.index.insert(name.clone(), id);
        self.entries.push(ParamEntry {
            name,
            value,
            frozen: false,
        });
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry {
        &self.entries[id.0]
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].value
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn is_frozen(&self, id: ParamId) -> bool {
        self.entries[id.0].frozen
    }

    pub fn set_frozen(&mut self, id: ParamId, frozen: bool) {
        self.entries[id.0].frozen = frozen;
    }

    /// Sets the freeze flag of every parameter whose name starts with `prefix`.
    pub fn freeze_prefix(&mut self, prefix: &str, frozen: bool) {
        for e in &mut self.entries {
            if e.name.starts_with(prefix) {
                e.frozen = frozen;
            }
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &ParamEntry)> {
        self.entries.iter().enumerate().map(|(i, e)| (ParamId(i), e))
    }

    /// Registers `id` on `tape`, honouring its freeze flag.
    pub fn var<'a>(&'a self, tape: &mut Tape<'a>, id: ParamId) -> Var {
        let e = &self.entries[id.0];
        tape.param(id, &e.value, e.frozen)
    }

    /// Little-endian bytes of every parameter whose name starts with `prefix`,
    /// in storage order. Used to compare parameter blocks bit for bit.
    pub fn serialize_prefix(&self, prefix: &str) -> Vec<u8> {
        let mut out = Vec::new();
        for e in self.entries.iter().filter(|e| e.name.starts_with(prefix)) {
            out.extend_from_slice(e.name.as_bytes());
            for v in e.value.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    /// Overwrites every parameter under `prefix` with the same-named tensor of
    /// `other`. Names and shapes must match exactly.
    pub fn copy_prefix_from(&mut self, other: &ParamStore, prefix: &str) -> Result<()> {
        let mine = self.entries.iter().filter(|e| e.name.starts_with(prefix)).count();
        let theirs = other.entries.iter().filter(|e| e.name.starts_with(prefix)).count();
        if mine != theirs {
            return Err(Error::Contract(format!(
                "`{prefix}` block has {mine} parameters here but {theirs} in the source"
            )));
        }
        for e in self.entries.iter_mut().filter(|e| e.name.starts_with(prefix)) {
            let src = other
                .by_name(&e.name)
                .ok_or_else(|| Error::Contract(format!("source has no parameter `{}`", e.name)))?;
            if src.shape() != e.value.shape() {
                return Err(Error::Dimension {
                    op: "copy_prefix_from",
                    lhs: e.value.shape().to_vec(),
                    rhs: src.shape().to_vec(),
                });
            }
            e.value = src.clone();
        }
        Ok(())
    }

    pub fn total_values(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }
}

pub const ENCODER_PREFIX: &str = "enc.";
pub const DECODER_PREFIX: &str = "dec.";

#[derive(Debug, Clone, Copy)]
pub struct LinearIds {
    pub w: ParamId,
    pub b: ParamId,
}

#[derive(Debug, Clone, Copy)]
pub struct NormIds {
    pub gain: ParamId,
    pub bias: ParamId,
}

#[derive(Debug, Clone, Copy)]
pub struct AttentionIds {
    pub q: LinearIds,
    pub k: LinearIds,
    pub v: LinearIds,
    pub o: LinearIds,
}

#[derive(Debug, Clone, Copy)]
pub struct EncoderLayerIds {
    pub attn: AttentionIds,
    pub norm1: NormIds,
    pub norm2: NormIds,
    pub ff1: LinearIds,
    pub ff2: LinearIds,
    pub act: Option<ParamId>,
}

#[derive(Debug, Clone, Copy)]
pub struct DecoderLayerIds {
    pub self_attn: AttentionIds,
    pub cross_attn: AttentionIds,
    pub norm1: NormIds,
    pub norm2: NormIds,
    pub norm3: NormIds,
    pub ff1: LinearIds,
    pub ff2: LinearIds,
}

/// All parameters of the model plus typed handles into the store.
#[derive(Debug, Clone)]
pub struct ModelParams {
    pub store: ParamStore,
    pub input: LinearIds,
    pub encoder: Vec<EncoderLayerIds>,
    pub embedding: ParamId,
    pub decoder: Vec<DecoderLayerIds>,
    pub output: LinearIds,
}

enum Init {
    Xavier { fan_in: usize, fan_out: usize },
    Zeros,
    Ones,
    Activation,
}

struct Builder<'c, F> {
    store: ParamStore,
    config: &'c ModelConfig,
    make: F,
}

impl<F> Builder<'_, F>
where
    F: FnMut(&str, &[usize], Init) -> Result<Tensor>,
{
    fn add(&mut self, name: String, shape: &[usize], init: Init) -> Result<ParamId> {
        let t = (self.make)(&name, shape, init)?;
        if t.shape() != shape {
            return Err(Error::Checkpoint(format!(
                "parameter `{name}` has shape {:?}, expected {shape:?}",
                t.shape()
            )));
        }
        self.store.insert(name, t)
    }

    fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize) -> Result<LinearIds> {
        Ok(LinearIds {
            w: self.add(
                format!("{name}.w"),
                &[fan_in, fan_out],
                Init::Xavier { fan_in, fan_out },
            )?,
            b: self.add(format!("{name}.b"), &[fan_out], Init::Zeros)?,
        })
    }

    fn norm(&mut self, name: &str) -> Result<NormIds> {
        let d = self.config.model_dim;
        Ok(NormIds {
            gain: self.add(format!("{name}.g"), &[d], Init::Ones)?,
            bias: self.add(format!("{name}.b"), &[d], Init::Zeros)?,
        })
    }

    fn attention(&mut self, name: &str) -> Result<AttentionIds> {
        let d = self.config.model_dim;
        Ok(AttentionIds {
            q: self.linear(&format!("{name}.q"), d, d)?,
            k: self.linear(&format!("{name}.k"), d, d)?,
            v: self.linear(&format!("{name}.v"), d, d)?,
            o: self.linear(&format!("{name}.o"), d, d)?,
        })
    }

    fn build(mut self) -> Result<ModelParams> {
        let c = self.config;
        let (d, ff, vocab) = (c.model_dim, c.ff_dim, c.vocab_size);
        let input = self.linear("enc.in", c.input_dim, d)?;
        let mut encoder = Vec::with_capacity(c.encoder_layers);
        for l in 0..c.encoder_layers {
            let p = format!("enc.{l}");
            let attn = self.attention(&format!("{p}.attn"))?;
            let norm1 = self.norm(&format!("{p}.ln1"))?;
            let norm2 = self.norm(&format!("{p}.ln2"))?;
            let ff1 = self.linear(&format!("{p}.ff1"), d, ff)?;
            let ff2 = self.linear(&format!("{p}.ff2"), ff, d)?;
            let act = if c.activation.kind.is_learnable() {
                Some(self.add(format!("{p}.act"), &[c.activation.param_count()], Init::Activation)?)
            } else {
                None
            };
            encoder.push(EncoderLayerIds {
                attn,
                norm1,
                norm2,
                ff1,
                ff2,
                act,
            });
        }
        let embedding = self.add(
            "dec.embed".into(),
            &[vocab, d],
            Init::Xavier {
                fan_in: vocab,
                fan_out: d,
            },
        )?;
        let mut decoder = Vec::with_capacity(c.decoder_layers);
        for l in 0..c.decoder_layers {
            let p = format!("dec.{l}");
            decoder.push(DecoderLayerIds {
                self_attn: self.attention(&format!("{p}.self"))?,
                cross_attn: self.attention(&format!("{p}.cross"))?,
                norm1: self.norm(&format!("{p}.ln1"))?,
                norm2: self.norm(&format!("{p}.ln2"))?,
                norm3: self.norm(&format!("{p}.ln3"))?,
                ff1: self.linear(&format!("{p}.ff1"), d, ff)?,
                ff2: self.linear(&format!("{p}.ff2"), ff, d)?,
            });
        }
        let output = self.linear("dec.out", d, vocab)?;
        Ok(ModelParams {
            store: self.store,
            input,
            encoder,
            embedding,
            decoder,
            output,
        })
    }
}

/// FNV-1a, used to give every parameter its own RNG stream.
fn name_hash(name: &str) -> u64 {
    name.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
    })
}

impl ModelParams {
    /// Seeded initialisation. Each tensor draws from an RNG derived from the
    /// seed and its own name, so changing one part of the architecture never
    /// perturbs the initial values of another.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let activation = config.activation;
        Builder {
            store: ParamStore::new(),
            config,
            make: |name: &str, shape: &[usize], init: Init| -> Result<Tensor> {
                let stream = seed ^ name_hash(name);
                let len = shape.iter().product();
                Ok(match init {
                    Init::Zeros => Tensor::zeros(shape),
                    Init::Ones => Tensor::full(shape, 1.0),
                    Init::Xavier { fan_in, fan_out } => {
                        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                        let mut rng = ChaCha8Rng::seed_from_u64(stream);
                        let data = (0..len).map(|_| rng.random_range(-bound..bound)).collect();
                        Tensor::new(shape.to_vec(), data)?
                    }
                    Init::Activation => Tensor::vector(init_params(&activation, stream, POLY_INIT_NOISE)?),
                })
            },
        }
        .build()
    }

    /// Rebuilds the typed layout from named tensors (e.g. a checkpoint).
    pub fn from_named(config: &ModelConfig, mut tensors: HashMap<String, (Tensor, bool)>) -> Result<Self> {
        config.validate()?;
        let mut flags = HashMap::new();
        let params = Builder {
            store: ParamStore::new(),
            config,
            make: |name: &str, _shape: &[usize], _init: Init| -> Result<Tensor> {
                let (t, frozen) = tensors
                    .remove(name)
                    .ok_or_else(|| Error::Checkpoint(format!("missing parameter `{name}`")))?;
                flags.insert(name.to_string(), frozen);
                Ok(t)
            },
        }
        .build()?;
        if let Some(extra) = tensors.keys().next() {
            return Err(Error::Checkpoint(format!("unexpected parameter `{extra}`")));
        }
        let mut params = params;
        for (name, frozen) in flags {
            let id = params.store.id(&name).expect("just inserted");
            params.store.set_frozen(id, frozen);
        }
        Ok(params)
    }

    pub fn freeze_decoder(&mut self, frozen: bool) {
        self.store.freeze_prefix(DECODER_PREFIX, frozen);
    }

    pub fn freeze_encoder(&mut self, frozen: bool) {
        self.store.freeze_prefix(ENCODER_PREFIX, frozen);
    }

    pub fn unfreeze_all(&mut self) {
        self.store.freeze_prefix("", false);
    }

    /// Current learnable activation coefficients of every encoder layer.
    pub fn activation_params(&self) -> Vec<Vec<f64>> {
        self.encoder
            .iter()
            .filter_map(|l| l.act)
            .map(|id| self.store.get(id).data().to_vec())
            .collect()
    }
}
