//! Experiment harness behind the `eegtext` binary: synthetic data generation,
//! single training runs, evaluation, the activation sweep and reports.

pub mod experiment;
pub mod settings;
pub mod sweep;

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use eegtext_core::data::interchange::write_interchange;
use eegtext_core::data::synthetic::gen_synthetic_raw;

use experiment::{
    evaluate, load_checkpoint, load_dataset, pretrain, train_and_evaluate, write_report, write_run, DataSource,
    Experiment,
};
use settings::Settings;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad flags, config values or missing inputs.
    #[error("{0}")]
    Usage(String),
    /// Anything that went wrong after the inputs were accepted.
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Usage(_) => ExitCode::from(1),
            CliError::Runtime(_) => ExitCode::from(2),
        }
    }
}

impl From<eegtext_core::Error> for CliError {
    fn from(e: eegtext_core::Error) -> Self {
        match e {
            eegtext_core::Error::Config(_) => CliError::Usage(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "eegtext", version, about = "EEG-to-text decoding experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, clap::Args)]
pub struct Common {
    /// Flat TOML file with the same keys as the flags.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub settings: Settings,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic corpus in the interchange format.
    GenSynthetic(Common),
    /// Pre-train the decoder, run both training stages and evaluate.
    Train(Common),
    /// Evaluate a checkpoint on the held-out split it was trained with.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Train and evaluate every activation configuration.
    Sweep(Common),
    /// Rebuild the combined tables of a finished sweep.
    Report {
        /// Sweep output directory.
        dir: PathBuf,
    },
}

/// Parses `args` (including the program name) and runs the command.
pub fn run_from_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(command: Command) -> Result<ExitCode, CliError> {
    match command {
        Command::GenSynthetic(c) => gen_synthetic_cmd(c),
        Command::Train(c) => train_cmd(c),
        Command::Evaluate { checkpoint, common } => evaluate_cmd(checkpoint, common),
        Command::Sweep(c) => sweep_cmd(c),
        Command::Report { dir } => report_cmd(dir),
    }
}

fn resolve(common: Common) -> Result<(Experiment, Settings), CliError> {
    let settings = Settings::layered(common.config.as_deref(), common.settings)?;
    let exp = Experiment::resolve(&settings)?;
    let echo = exp.to_settings();
    Ok((exp, echo))
}

fn gen_synthetic_cmd(common: Common) -> Result<ExitCode, CliError> {
    let (exp, _) = resolve(common)?;
    let DataSource::Synthetic(params) = exp.data else {
        return Err(CliError::Usage("gen-synthetic does not take --data".into()));
    };
    let path = exp.out_dir()?;
    let corpus = gen_synthetic_raw(&params)?;
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    write_interchange(path, &corpus.sentences)?;
    let words: usize = corpus.sentences.iter().map(|s| s.words.len()).sum();
    let recordings: usize = corpus
        .sentences
        .iter()
        .flat_map(|s| &s.words)
        .map(|w| w.recordings())
        .sum();
    println!(
        "wrote {}: {} sentences, {} words, {} recordings, {} electrodes, vocabulary {}",
        path.display(),
        corpus.sentences.len(),
        words,
        recordings,
        params.electrodes,
        params.vocab_size
    );
    Ok(ExitCode::SUCCESS)
}

fn train_cmd(common: Common) -> Result<ExitCode, CliError> {
    let (exp, settings) = resolve(common)?;
    let out = exp.out_dir()?.to_path_buf();
    let data = load_dataset(&exp.data, exp.seed)?;
    let model = data.model_config(&exp.model)?;
    let decoder = pretrain(&model, &exp.train, exp.seed, &data)?;
    let run = train_and_evaluate(&model, &exp, &data, &decoder)?;
    write_run(&out, &settings, &model, &data, &run)?;
    println!(
        "{}",
        sweep::markdown_table(&[single_row(&model.activation.to_string(), &run.report)])
    );
    println!("wrote {}", out.display());
    Ok(ExitCode::SUCCESS)
}

fn evaluate_cmd(checkpoint: PathBuf, common: Common) -> Result<ExitCode, CliError> {
    let (ckpt, vocab, mut trained) = load_checkpoint(&checkpoint)?;
    trained.out = None;
    // Data and split come from the checkpoint unless overridden.
    let file = match &common.config {
        Some(p) => Settings::from_file(p)?,
        None => Settings::default(),
    };
    let settings = Settings::defaults()
        .overlay(trained)
        .overlay(file)
        .overlay(common.settings);
    let exp = Experiment::resolve(&settings)?;
    let out = match &exp.out {
        Some(o) => o.clone(),
        None => checkpoint.parent().map(PathBuf::from).unwrap_or_default(),
    };
    let data = load_dataset(&exp.data, exp.seed)?;
    if data.vocab != vocab {
        return Err(CliError::Runtime(
            "checkpoint vocabulary does not match the data's training split".into(),
        ));
    }
    if data.electrodes != ckpt.config.input_dim {
        return Err(CliError::Runtime(format!(
            "checkpoint expects {} electrodes, data has {}",
            ckpt.config.input_dim, data.electrodes
        )));
    }
    let (report, generated) = evaluate(&ckpt.params, &ckpt.config, &exp.generation, &data)?;
    write_report(&out, &report, &generated)?;
    println!(
        "{}",
        sweep::markdown_table(&[single_row(&ckpt.config.activation.to_string(), &report)])
    );
    Ok(ExitCode::SUCCESS)
}

fn single_row(label: &str, report: &eegtext_core::metrics::MetricReport) -> sweep::RowResult {
    sweep::RowResult {
        label: label.to_string(),
        slug: label.to_string(),
        status: sweep::RowStatus::Ok,
        report: Some(report.clone()),
    }
}

fn sweep_cmd(common: Common) -> Result<ExitCode, CliError> {
    let (exp, settings) = resolve(common)?;
    let out = exp.out_dir()?;
    fs::create_dir_all(out)?;
    fs::write(out.join(experiment::CONFIG_FILE), settings.to_toml())?;
    let results = sweep::run_sweep(&exp)?;
    print!("{}", sweep::markdown_table(&results));
    let ok = results.iter().filter(|r| r.succeeded()).count();
    println!(
        "{ok}/{} configurations succeeded; tables in {}",
        results.len(),
        out.display()
    );
    Ok(if ok > 0 { ExitCode::SUCCESS } else { ExitCode::from(2) })
}

fn report_cmd(dir: PathBuf) -> Result<ExitCode, CliError> {
    let rows = sweep::load_sweep(&dir)?;
    sweep::write_tables(&dir, &rows)?;
    print!("{}", sweep::markdown_table(&rows));
    Ok(ExitCode::SUCCESS)
}
