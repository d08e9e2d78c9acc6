//! Resolved experiment configuration, data preparation and single runs.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use eegtext_core::data::interchange::load_zuco_jsonl;
use eegtext_core::data::split::{split, Split, SplitSpec};
use eegtext_core::data::synthetic::{gen_synthetic, SyntheticParams};
use eegtext_core::data::vocab::Vocabulary;
use eegtext_core::data::{encode_all, SentenceSample};
use eegtext_core::metrics::{evaluate_corpus, GeneratedSentence, MetricReport, ModelGenerator};
use eegtext_core::model::params::DECODER_PREFIX;
use eegtext_core::model::{Checkpoint, GenerationConfig, ModelConfig, ModelParams};
use eegtext_core::training::{no_hook, pretrain_decoder_lm, train_two_stage, EpochRecord, RunLog, TrainConfig};
use eegtext_core::ActivationSpec;

use crate::settings::Settings;
use crate::CliError;

pub const CHECKPOINT_FILE: &str = "checkpoint.ckpt";
pub const RUNLOG_FILE: &str = "runlog.jsonl";
pub const CONFIG_FILE: &str = "config.toml";
pub const REPORT_FILE: &str = "report.json";
pub const GENERATED_FILE: &str = "generated.jsonl";

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Synthetic(SyntheticParams),
    File(PathBuf),
}

/// Fully resolved settings of one run. Model input and vocabulary sizes are
/// filled in once the data is loaded.
#[derive(Debug, Clone, PartialEq)]
pub struct Experiment {
    pub data: DataSource,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub generation: GenerationConfig,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub jobs: usize,
    pub rows: Option<Vec<String>>,
}

macro_rules! need {
    ($s:ident . $f:ident) => {
        $s.$f.clone().expect(concat!("default for ", stringify!($f)))
    };
}

impl Experiment {
    /// Validates `settings` (already layered over the defaults), reporting
    /// every problem at once.
    pub fn resolve(settings: &Settings) -> Result<Self, CliError> {
        let mut problems = Vec::new();
        let seed = need!(settings.seed);
        let data = match (&settings.data, settings.synthetic) {
            (Some(_), Some(true)) => {
                problems.push("--data and --synthetic are mutually exclusive".to_string());
                None
            }
            (Some(path), _) => {
                if !path.is_file() {
                    problems.push(format!("data file {} does not exist", path.display()));
                }
                Some(DataSource::File(path.clone()))
            }
            (None, Some(false)) => {
                problems.push("no data source: pass --data or --synthetic".to_string());
                None
            }
            (None, _) => {
                let p = SyntheticParams {
                    vocab_size: need!(settings.vocab),
                    n_sentences: need!(settings.sentences),
                    min_len: need!(settings.min_words),
                    max_len: need!(settings.max_words),
                    electrodes: need!(settings.electrodes),
                    noise_std: need!(settings.noise),
                    seed,
                };
                if let Err(e) = p.validate() {
                    problems.push(e.to_string());
                }
                Some(DataSource::Synthetic(p))
            }
        };
        let activation = match need!(settings.activation).parse::<ActivationSpec>() {
            Ok(a) => a,
            Err(e) => {
                problems.push(e.to_string());
                ActivationSpec::relu()
            }
        };
        let model = ModelConfig {
            input_dim: need!(settings.electrodes),
            encoder_layers: need!(settings.layers),
            model_dim: need!(settings.model_dim),
            heads: need!(settings.heads),
            ff_dim: need!(settings.ff_dim),
            activation,
            norm_first: need!(settings.norm_first),
            heads_same_as_layers: need!(settings.heads_same_as_layers),
            decoder_layers: need!(settings.decoder_layers),
            decoder_heads: need!(settings.decoder_heads),
            vocab_size: ModelConfig::default().vocab_size,
            max_seq_len: need!(settings.max_seq_len),
            dropout_rate: need!(settings.dropout),
        }
        .resolved();
        if let Err(e) = model.validate() {
            problems.push(e.to_string());
        }
        let train = TrainConfig {
            epochs_per_stage: need!(settings.epochs),
            batch_size: need!(settings.batch_size),
            learning_rate: need!(settings.lr),
            seed,
            grad_clip_norm: need!(settings.grad_clip),
            lm_pretrain_epochs: need!(settings.lm_epochs),
            lm_learning_rate: need!(settings.lm_lr),
            ..TrainConfig::default()
        };
        if let Err(e) = train.validate() {
            problems.push(e.to_string());
        }
        let generation = GenerationConfig {
            beam_width: need!(settings.beam),
            max_len: need!(settings.max_gen_len),
            length_penalty: need!(settings.length_penalty),
        };
        if generation.beam_width < 1 {
            problems.push("beam must be >= 1".into());
        }
        if generation.max_len < 1 {
            problems.push("max-gen-len must be >= 1".into());
        }
        let jobs = settings
            .jobs
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
        if jobs < 1 {
            problems.push("jobs must be >= 1".into());
        }
        if let Some(rows) = &settings.rows {
            if rows.is_empty() {
                problems.push("row list is empty".into());
            }
        }
        match (problems.is_empty(), data) {
            (true, Some(data)) => Ok(Self {
                data,
                model,
                train,
                generation,
                seed,
                out: settings.out.clone(),
                jobs,
                rows: settings.rows.clone(),
            }),
            _ => Err(CliError::Usage(problems.join("\n"))),
        }
    }

    /// The settings that reproduce this experiment exactly.
    pub fn to_settings(&self) -> Settings {
        let (data, synthetic) = match &self.data {
            DataSource::File(p) => (Some(p.clone()), Some(false)),
            DataSource::Synthetic(_) => (None, Some(true)),
        };
        let syn = match &self.data {
            DataSource::Synthetic(p) => *p,
            DataSource::File(_) => SyntheticParams::default(),
        };
        Settings {
            data,
            synthetic,
            vocab: Some(syn.vocab_size),
            sentences: Some(syn.n_sentences),
            electrodes: Some(self.model.input_dim),
            noise: Some(syn.noise_std),
            min_words: Some(syn.min_len),
            max_words: Some(syn.max_len),
            activation: Some(self.model.activation.to_string()),
            norm_first: Some(self.model.norm_first),
            heads_same_as_layers: Some(self.model.heads_same_as_layers),
            layers: Some(self.model.encoder_layers),
            heads: Some(self.model.heads),
            model_dim: Some(self.model.model_dim),
            ff_dim: Some(self.model.ff_dim),
            decoder_layers: Some(self.model.decoder_layers),
            decoder_heads: Some(self.model.decoder_heads),
            dropout: Some(self.model.dropout_rate),
            max_seq_len: Some(self.model.max_seq_len),
            epochs: Some(self.train.epochs_per_stage),
            lm_epochs: Some(self.train.lm_pretrain_epochs),
            batch_size: Some(self.train.batch_size),
            lr: Some(self.train.learning_rate),
            lm_lr: Some(self.train.lm_learning_rate),
            grad_clip: Some(self.train.grad_clip_norm),
            beam: Some(self.generation.beam_width),
            length_penalty: Some(self.generation.length_penalty),
            max_gen_len: Some(self.generation.max_len),
            seed: Some(self.seed),
            out: self.out.clone(),
            jobs: Some(self.jobs),
            rows: self.rows.clone(),
        }
    }

    pub fn out_dir(&self) -> Result<&Path, CliError> {
        self.out
            .as_deref()
            .ok_or_else(|| CliError::Usage("--out is required".into()))
    }
}

/// Split corpus with a vocabulary built from the training part.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub vocab: Vocabulary,
    pub split: Split<SentenceSample>,
    pub electrodes: usize,
}

pub fn load_dataset(source: &DataSource, seed: u64) -> Result<Dataset, CliError> {
    let samples = match source {
        DataSource::Synthetic(p) => gen_synthetic(p)?,
        DataSource::File(path) => load_zuco_jsonl(path)?,
    };
    let electrodes = samples
        .first()
        .map(SentenceSample::electrodes)
        .ok_or_else(|| CliError::Runtime("dataset has no usable sentences".into()))?;
    let mut split = split(&samples, &SplitSpec::with_seed(seed))?;
    let vocab = Vocabulary::build(split.train.iter().map(|s| s.text.as_str()));
    encode_all(&mut split.train, &vocab);
    encode_all(&mut split.valid, &vocab);
    encode_all(&mut split.test, &vocab);
    Ok(Dataset {
        vocab,
        split,
        electrodes,
    })
}

impl Dataset {
    /// `template` with input width and vocabulary size taken from the data.
    pub fn model_config(&self, template: &ModelConfig) -> Result<ModelConfig, CliError> {
        let cfg = ModelConfig {
            input_dim: self.electrodes,
            vocab_size: self.vocab.len(),
            ..template.clone()
        }
        .resolved();
        cfg.validate()?;
        Ok(cfg)
    }
}

/// A decoder after language-model pre-training, reusable by any encoder
/// configuration with the same decoder shape.
#[derive(Debug, Clone)]
pub struct PretrainedDecoder {
    pub params: ModelParams,
    pub config: ModelConfig,
    pub records: Vec<EpochRecord>,
}

impl PretrainedDecoder {
    fn compatible(&self, cfg: &ModelConfig) -> bool {
        let a = &self.config;
        a.model_dim == cfg.model_dim
            && a.ff_dim == cfg.ff_dim
            && a.decoder_layers == cfg.decoder_layers
            && a.decoder_heads == cfg.decoder_heads
            && a.vocab_size == cfg.vocab_size
            && a.max_seq_len == cfg.max_seq_len
            && a.dropout_rate == cfg.dropout_rate
    }
}

pub fn pretrain(
    model: &ModelConfig,
    train: &TrainConfig,
    seed: u64,
    data: &Dataset,
) -> Result<PretrainedDecoder, CliError> {
    let mut params = ModelParams::init(model, seed)?;
    let records = pretrain_decoder_lm(
        &mut params,
        model,
        train,
        &data.split.train,
        &data.split.valid,
        &mut no_hook,
    )?;
    Ok(PretrainedDecoder {
        params,
        config: model.clone(),
        records,
    })
}

pub struct RunOutput {
    pub params: ModelParams,
    pub log: RunLog,
    pub report: MetricReport,
    pub generated: Vec<GeneratedSentence>,
}

/// Two-stage training on top of `decoder`, then evaluation on the test split.
pub fn train_and_evaluate(
    model: &ModelConfig,
    exp: &Experiment,
    data: &Dataset,
    decoder: &PretrainedDecoder,
) -> Result<RunOutput, CliError> {
    if !decoder.compatible(model) {
        return Err(CliError::Runtime(
            "pre-trained decoder does not match the model config".into(),
        ));
    }
    let mut params = ModelParams::init(model, exp.seed)?;
    params.store.copy_prefix_from(&decoder.params.store, DECODER_PREFIX)?;
    let mut log = RunLog::new(exp.train.clone());
    log.epochs = decoder.records.clone();
    log.epochs.extend(train_two_stage(
        &mut params,
        model,
        &exp.train,
        &data.split.train,
        &data.split.valid,
        &mut no_hook,
    )?);
    let (report, generated) = evaluate(&params, model, &exp.generation, data)?;
    Ok(RunOutput {
        params,
        log,
        report,
        generated,
    })
}

pub fn evaluate(
    params: &ModelParams,
    model: &ModelConfig,
    generation: &GenerationConfig,
    data: &Dataset,
) -> Result<(MetricReport, Vec<GeneratedSentence>), CliError> {
    let generator = ModelGenerator {
        params,
        config: model,
        generation: *generation,
    };
    Ok(evaluate_corpus(&generator, &data.vocab, &data.split.test)?)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CheckpointMeta {
    vocab: Vocabulary,
    settings: Settings,
}

/// Writes the checkpoint, run log, resolved config, report and generated
/// sentences of one run into `dir`.
pub fn write_run(
    dir: &Path,
    settings: &Settings,
    model: &ModelConfig,
    data: &Dataset,
    run: &RunOutput,
) -> Result<(), CliError> {
    fs::create_dir_all(dir)?;
    // Run-control settings stay out so the checkpoint depends only on what
    // shaped the model.
    let meta = CheckpointMeta {
        vocab: data.vocab.clone(),
        settings: Settings {
            out: None,
            jobs: None,
            ..settings.clone()
        },
    };
    Checkpoint {
        config: model.clone(),
        params: run.params.clone(),
        metadata: serde_json::to_value(meta)?,
    }
    .save(&dir.join(CHECKPOINT_FILE))?;
    fs::write(dir.join(RUNLOG_FILE), run.log.to_jsonl()?)?;
    fs::write(dir.join(CONFIG_FILE), settings.to_toml())?;
    write_report(dir, &run.report, &run.generated)
}

pub fn write_report(dir: &Path, report: &MetricReport, generated: &[GeneratedSentence]) -> Result<(), CliError> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(REPORT_FILE), serde_json::to_string_pretty(report)? + "\n")?;
    let mut lines = String::new();
    for g in generated {
        lines.push_str(&serde_json::to_string(g)?);
        lines.push('\n');
    }
    fs::write(dir.join(GENERATED_FILE), lines)?;
    Ok(())
}

/// Loads a checkpoint with the vocabulary and settings it was trained with.
pub fn load_checkpoint(path: &Path) -> Result<(Checkpoint, Vocabulary, Settings), CliError> {
    let ckpt = Checkpoint::load(path)?;
    let meta: CheckpointMeta = serde_json::from_value(ckpt.metadata.clone())
        .map_err(|e| CliError::Runtime(format!("checkpoint metadata: {e}")))?;
    Ok((ckpt, meta.vocab, meta.settings))
}
