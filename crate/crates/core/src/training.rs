//! Decoder language-model pre-training and the two-stage protocol:
//! stage 1 trains the encoder against a frozen decoder, stage 2 fine-tunes
//! everything. Plain SGD with global-norm clipping throughout.

use std::fmt;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::vocab::PAD;
use crate::data::SentenceSample;
use crate::error::{Error, Result};
use crate::model::network::{decoder_forward, encoder_forward, zero_context, Dropout};
use crate::model::params::{ModelParams, ParamStore};
use crate::model::ModelConfig;
use crate::numerics::{Gradients, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    /// Plain stochastic gradient descent, no momentum.
    Sgd,
}

impl fmt::Display for Optimizer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("sgd")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs_per_stage: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub seed: u64,
    /// Global gradient-norm bound; `0` disables clipping.
    pub grad_clip_norm: f64,
    pub lm_pretrain_epochs: usize,
    /// Learning rate of decoder language-model pre-training.
    pub lm_learning_rate: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs_per_stage: 10,
            batch_size: 16,
            learning_rate: 5e-5,
            optimizer: Optimizer::Sgd,
            seed: 0,
            grad_clip_norm: 1.0,
            lm_pretrain_epochs: 30,
            lm_learning_rate: 0.05,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.epochs_per_stage < 1 {
            problems.push("epochs_per_stage must be >= 1".to_string());
        }
        if self.batch_size < 1 {
            problems.push("batch_size must be >= 1".to_string());
        }
        if !(self.learning_rate > 0.0) {
            problems.push(format!("learning_rate must be > 0, got {}", self.learning_rate));
        }
        if !(self.lm_learning_rate > 0.0) {
            problems.push(format!("lm_learning_rate must be > 0, got {}", self.lm_learning_rate));
        }
        if !(self.grad_clip_norm >= 0.0) {
            problems.push(format!("grad_clip_norm must be >= 0, got {}", self.grad_clip_norm));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    LmPretrain,
    Stage1,
    Stage2,
}

impl Stage {
    fn index(self) -> u64 {
        match self {
            Stage::LmPretrain => 0,
            Stage::Stage1 => 1,
            Stage::Stage2 => 2,
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::LmPretrain => "lm_pretrain",
            Stage::Stage1 => "stage1",
            Stage::Stage2 => "stage2",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub stage: Stage,
    /// 1-based within the stage.
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_loss: Option<f64>,
    pub batches: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub wall_time_secs: f64,
}

impl EpochRecord {
    /// Equality ignoring wall-clock time.
    pub fn same_outcome(&self, other: &Self) -> bool {
        Self {
            wall_time_secs: 0.0,
            ..self.clone()
        } == Self {
            wall_time_secs: 0.0,
            ..other.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum LogLine {
    Config(TrainConfig),
    Epoch(EpochRecord),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub train_config: TrainConfig,
    pub epochs: Vec<EpochRecord>,
}

impl RunLog {
    pub fn new(train_config: TrainConfig) -> Self {
        Self {
            train_config,
            epochs: Vec::new(),
        }
    }

    pub fn stage(&self, stage: Stage) -> impl Iterator<Item = &EpochRecord> {
        self.epochs.iter().filter(move |e| e.stage == stage)
    }

    /// One JSON object per line: the training config first, then every epoch.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = serde_json::to_string(&LogLine::Config(self.train_config.clone()))?;
        out.push('\n');
        for e in &self.epochs {
            out.push_str(&serde_json::to_string(&LogLine::Epoch(e.clone()))?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut config = None;
        let mut epochs = Vec::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            match serde_json::from_str(line)? {
                LogLine::Config(c) => config = Some(c),
                LogLine::Epoch(e) => epochs.push(e),
            }
        }
        let train_config = config.ok_or_else(|| Error::Contract("run log has no config record".into()))?;
        Ok(Self { train_config, epochs })
    }

    /// Equality ignoring wall-clock time.
    pub fn same_outcome(&self, other: &Self) -> bool {
        self.train_config == other.train_config
            && self.epochs.len() == other.epochs.len()
            && self.epochs.iter().zip(&other.epochs).all(|(a, b)| a.same_outcome(b))
    }
}

/// Mean negative log-likelihood of `targets` under row-wise softmax of
/// `logits`, over positions whose target is not `pad_id`.
pub fn cross_entropy_loss(logits: &Tensor, targets: &[usize], pad_id: usize) -> Result<f64> {
    let count = targets.iter().filter(|&&t| t != pad_id).count();
    if count == 0 {
        return Err(Error::Contract("cross-entropy over an all-padding target".into()));
    }
    let mut tape = Tape::new();
    let l = tape.constant(logits.clone());
    let total = tape.cross_entropy_sum(l, targets, pad_id)?;
    Ok(tape.value(total).data()[0] / count as f64)
}

/// Rescales `grads` so their global norm is at most `clip_norm`; returns the
/// norm before clipping.
pub fn clip_gradients(grads: &mut Gradients, clip_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if clip_norm > 0.0 && norm > clip_norm {
        let factor = clip_norm / norm;
        for (_, g) in grads.iter_mut() {
            g.scale_in_place(factor);
        }
    }
    norm
}

/// Clips, then applies `p <- p - lr * g` to every unfrozen parameter.
pub fn sgd_step(store: &mut ParamStore, mut grads: Gradients, lr: f64, clip_norm: f64) -> Result<f64> {
    if grads.iter().any(|(_, g)| !g.is_finite()) {
        return Err(Error::NonFinite("gradient".into()));
    }
    let norm = clip_gradients(&mut grads, clip_norm);
    for (id, g) in grads.iter() {
        if store.is_frozen(id) {
            continue;
        }
        for (p, gv) in store.get_mut(id).data_mut().iter_mut().zip(g.data()) {
            *p -= lr * gv;
        }
    }
    Ok(norm)
}

/// Decoder input `[BOS, t1..tn]` and targets `[t1..tn, EOS]`, truncated to
/// `max_len` positions.
pub fn teacher_forcing_pair(token_ids: &[usize], max_len: usize) -> (Vec<usize>, Vec<usize>) {
    let n = (token_ids.len().saturating_sub(1)).min(max_len);
    (token_ids[..n].to_vec(), token_ids[1..=n].to_vec())
}

/// Whether the encoder feeds the decoder, or the decoder runs on text alone.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Context {
    Eeg,
    Zero,
}

/// Summed token NLL of a batch and its token count, recorded on `tape`.
fn batch_nll<'a>(
    tape: &mut Tape<'a>,
    params: &'a ModelParams,
    config: &ModelConfig,
    batch: &[&SentenceSample],
    context: Context,
    dropout: &mut Dropout,
) -> Result<(Var, usize)> {
    let mut total: Option<Var> = None;
    let mut count = 0;
    for sample in batch {
        if sample.token_ids.len() < 2 {
            return Err(Error::Contract(format!(
                "sample {} is not tokenized",
                sample.sentence_id
            )));
        }
        let (input, targets) = teacher_forcing_pair(&sample.token_ids, config.max_seq_len);
        let memory = match context {
            Context::Eeg => {
                let feats = sample.feature_matrix();
                let mask = vec![true; feats.rows()];
                encoder_forward(tape, params, config, &feats, &mask, dropout)?
            }
            Context::Zero => tape.constant(zero_context(config)),
        };
        let logits = decoder_forward(tape, params, config, memory, None, &input, dropout)?;
        let nll = tape.cross_entropy_sum(logits, &targets, PAD)?;
        count += targets.iter().filter(|&&t| t != PAD).count();
        total = Some(match total {
            Some(t) => tape.add(t, nll)?,
            None => nll,
        });
    }
    let total = total.ok_or_else(|| Error::Contract("empty batch".into()))?;
    Ok((total, count))
}

fn mix(seed: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(seed ^ 0x9e37_79b9_7f4a_7c15, |h, &p| {
        let x = (h ^ p).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        x ^ (x >> 31)
    })
}

/// Mean token loss over `samples` with dropout disabled.
pub fn mean_loss(
    params: &ModelParams,
    config: &ModelConfig,
    samples: &[SentenceSample],
    with_eeg: bool,
) -> Result<f64> {
    let context = if with_eeg { Context::Eeg } else { Context::Zero };
    let mut total = 0.0;
    let mut count = 0;
    for chunk in samples.chunks(16) {
        let refs: Vec<&SentenceSample> = chunk.iter().collect();
        let mut tape = Tape::new();
        let (nll, n) = batch_nll(&mut tape, params, config, &refs, context, &mut Dropout::disabled())?;
        total += tape.value(nll).data()[0];
        count += n;
    }
    if count == 0 {
        return Err(Error::Contract("no target tokens".into()));
    }
    Ok(total / count as f64)
}

/// Called after every epoch with the current parameters.
pub type EpochHook<'h> = dyn FnMut(&ModelParams, &EpochRecord) + 'h;

struct StagePlan {
    stage: Stage,
    epochs: usize,
    learning_rate: f64,
    context: Context,
}

fn run_stage(
    params: &mut ModelParams,
    config: &ModelConfig,
    train_cfg: &TrainConfig,
    plan: StagePlan,
    train: &[SentenceSample],
    valid: &[SentenceSample],
    hook: &mut EpochHook<'_>,
) -> Result<Vec<EpochRecord>> {
    if train.is_empty() {
        return Err(Error::Contract(format!("{}: empty training split", plan.stage)));
    }
    let mut records = Vec::with_capacity(plan.epochs);
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=plan.epochs {
        let start = Instant::now();
        let stage_seed = mix(train_cfg.seed, &[plan.stage.index(), epoch as u64]);
        order.sort_unstable();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(stage_seed));
        let mut epoch_nll = 0.0;
        let mut epoch_tokens = 0;
        let mut batches = 0;
        for (b, idx) in order.chunks(train_cfg.batch_size).enumerate() {
            let batch: Vec<&SentenceSample> = idx.iter().map(|&i| &train[i]).collect();
            let mut dropout = Dropout::new(config.dropout_rate, mix(stage_seed, &[b as u64]));
            let grads = {
                let mut tape = Tape::new();
                let (nll, count) = batch_nll(&mut tape, params, config, &batch, plan.context, &mut dropout)?;
                let value = tape.value(nll).data()[0];
                if !value.is_finite() {
                    return Err(Error::Diverged {
                        stage: plan.stage.to_string(),
                        epoch,
                        message: format!("non-finite loss in batch {b}"),
                    });
                }
                epoch_nll += value;
                epoch_tokens += count;
                let loss = tape.scale(nll, 1.0 / count as f64);
                tape.backward(loss)?
            };
            sgd_step(&mut params.store, grads, plan.learning_rate, train_cfg.grad_clip_norm).map_err(|e| {
                Error::Diverged {
                    stage: plan.stage.to_string(),
                    epoch,
                    message: e.to_string(),
                }
            })?;
            batches += 1;
        }
        let valid_loss = if valid.is_empty() {
            None
        } else {
            Some(mean_loss(params, config, valid, plan.context == Context::Eeg)?)
        };
        let record = EpochRecord {
            stage: plan.stage,
            epoch,
            train_loss: epoch_nll / epoch_tokens as f64,
            valid_loss,
            batches,
            batch_size: train_cfg.batch_size,
            learning_rate: plan.learning_rate,
            optimizer: train_cfg.optimizer,
            wall_time_secs: start.elapsed().as_secs_f64(),
        };
        log::info!(
            "{} epoch {}/{}: train {:.4} valid {}",
            plan.stage,
            epoch,
            plan.epochs,
            record.train_loss,
            record.valid_loss.map_or("-".into(), |v| format!("{v:.4}"))
        );
        hook(params, &record);
        records.push(record);
    }
    Ok(records)
}

fn apply_freezing(params: &mut ModelParams, stage: Stage) {
    match stage {
        Stage::LmPretrain => {
            params.freeze_encoder(true);
            params.freeze_decoder(false);
        }
        Stage::Stage1 => {
            params.freeze_encoder(false);
            params.freeze_decoder(true);
        }
        Stage::Stage2 => params.unfreeze_all(),
    }
}

/// Gradients of the mean token loss of `batch` with `stage`'s parameters
/// frozen and dropout off. Nothing is updated; the freezing stays applied.
pub fn stage_gradients(
    params: &mut ModelParams,
    config: &ModelConfig,
    stage: Stage,
    batch: &[SentenceSample],
) -> Result<Gradients> {
    apply_freezing(params, stage);
    let context = if stage == Stage::LmPretrain {
        Context::Zero
    } else {
        Context::Eeg
    };
    let refs: Vec<&SentenceSample> = batch.iter().collect();
    let params = &*params;
    let mut tape = Tape::new();
    let (nll, count) = batch_nll(&mut tape, params, config, &refs, context, &mut Dropout::disabled())?;
    let loss = tape.scale(nll, 1.0 / count as f64);
    tape.backward(loss)
}

/// Trains the decoder alone as a language model (zero cross-attention
/// context); encoder parameters are frozen and left untouched.
pub fn pretrain_decoder_lm(
    params: &mut ModelParams,
    config: &ModelConfig,
    train_cfg: &TrainConfig,
    train: &[SentenceSample],
    valid: &[SentenceSample],
    hook: &mut EpochHook<'_>,
) -> Result<Vec<EpochRecord>> {
    train_cfg.validate()?;
    apply_freezing(params, Stage::LmPretrain);
    let plan = StagePlan {
        stage: Stage::LmPretrain,
        epochs: train_cfg.lm_pretrain_epochs,
        learning_rate: train_cfg.lm_learning_rate,
        context: Context::Zero,
    };
    let out = run_stage(params, config, train_cfg, plan, train, valid, hook);
    params.freeze_encoder(false);
    out
}

/// Stage 1: encoder (and activation coefficients) learn against a frozen decoder.
pub fn train_stage1(
    params: &mut ModelParams,
    config: &ModelConfig,
    train_cfg: &TrainConfig,
    train: &[SentenceSample],
    valid: &[SentenceSample],
    hook: &mut EpochHook<'_>,
) -> Result<Vec<EpochRecord>> {
    train_cfg.validate()?;
    apply_freezing(params, Stage::Stage1);
    let plan = StagePlan {
        stage: Stage::Stage1,
        epochs: train_cfg.epochs_per_stage,
        learning_rate: train_cfg.learning_rate,
        context: Context::Eeg,
    };
    run_stage(params, config, train_cfg, plan, train, valid, hook)
}

/// Stage 2: everything is trainable.
pub fn train_stage2(
    params: &mut ModelParams,
    config: &ModelConfig,
    train_cfg: &TrainConfig,
    train: &[SentenceSample],
    valid: &[SentenceSample],
    hook: &mut EpochHook<'_>,
) -> Result<Vec<EpochRecord>> {
    train_cfg.validate()?;
    apply_freezing(params, Stage::Stage2);
    let plan = StagePlan {
        stage: Stage::Stage2,
        epochs: train_cfg.epochs_per_stage,
        learning_rate: train_cfg.learning_rate,
        context: Context::Eeg,
    };
    run_stage(params, config, train_cfg, plan, train, valid, hook)
}

/// Stage 1 followed by stage 2 on an already pre-trained decoder.
pub fn train_two_stage(
    params: &mut ModelParams,
    config: &ModelConfig,
    train_cfg: &TrainConfig,
    train: &[SentenceSample],
    valid: &[SentenceSample],
    hook: &mut EpochHook<'_>,
) -> Result<Vec<EpochRecord>> {
    let mut records = train_stage1(params, config, train_cfg, train, valid, hook)?;
    records.extend(train_stage2(params, config, train_cfg, train, valid, hook)?);
    Ok(records)
}

/// The whole protocol: LM pre-training, stage 1, stage 2.
pub fn run_protocol(
    params: &mut ModelParams,
    config: &ModelConfig,
    train_cfg: &TrainConfig,
    train: &[SentenceSample],
    valid: &[SentenceSample],
    hook: &mut EpochHook<'_>,
) -> Result<RunLog> {
    let mut log = RunLog::new(train_cfg.clone());
    log.epochs = pretrain_decoder_lm(params, config, train_cfg, train, valid, hook)?;
    log.epochs
        .extend(train_two_stage(params, config, train_cfg, train, valid, hook)?);
    Ok(log)
}

/// A hook that does nothing.
pub fn no_hook(_: &ModelParams, _: &EpochRecord) {}
