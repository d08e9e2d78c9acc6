//! The activation-function sweep and its combined results table.

use std::fmt::Write as _;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use eegtext_core::metrics::MetricReport;

use crate::experiment::{
    load_dataset, pretrain, train_and_evaluate, write_run, Dataset, Experiment, PretrainedDecoder, REPORT_FILE,
};
use crate::CliError;

pub const MANIFEST_FILE: &str = "sweep.json";
pub const TABLE_MD: &str = "results.md";
pub const TABLE_CSV: &str = "results.csv";
pub const ERROR_FILE: &str = "error.txt";

/// One configuration of the sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SweepRow {
    pub label: &'static str,
    pub activation: &'static str,
    pub norm_first: bool,
    pub heads_same_as_layers: bool,
}

const fn row(label: &'static str, activation: &'static str, norm_first: bool) -> SweepRow {
    SweepRow {
        label,
        activation,
        norm_first,
        heads_same_as_layers: false,
    }
}

/// The fifteen configurations of the activation comparison, in table order.
pub const DEFAULT_ROWS: [SweepRow; 15] = [
    row("plain", "relu", false),
    row("swish", "swish", false),
    row("gelu", "gelu", false),
    row("elu", "elu", false),
    row("leaky relu", "leaky_relu", false),
    row("swish norm first", "swish", true),
    row("parametric relu", "prelu", false),
    row("sine", "sine", false),
    row("chebysev degree 3", "chebyshev3", false),
    row("chebysev degree 3 norm first", "chebyshev3", true),
    row("chebysev degree 2", "chebyshev2", false),
    row("torch poly 2", "poly2", false),
    row("torch poly 3", "poly3", false),
    row("negative positive poly", "neg_pos_poly", false),
    row("negative positive poly norm first", "neg_pos_poly", true),
];

/// Baseline encoder with one attention head per layer; selectable by name.
pub const HEADS_SAME_AS_LAYERS: SweepRow = SweepRow {
    label: "heads same as layers",
    activation: "relu",
    norm_first: false,
    heads_same_as_layers: true,
};

impl SweepRow {
    pub fn slug(&self) -> String {
        self.label.replace(' ', "-")
    }

    fn matches(&self, name: &str) -> bool {
        let name = name.trim();
        name.eq_ignore_ascii_case(self.label) || name.eq_ignore_ascii_case(&self.slug())
    }
}

/// Rows selected by label or slug, kept in table order.
pub fn select_rows(names: Option<&[String]>) -> Result<Vec<SweepRow>, CliError> {
    let Some(names) = names else {
        return Ok(DEFAULT_ROWS.to_vec());
    };
    let all: Vec<SweepRow> = DEFAULT_ROWS.iter().copied().chain([HEADS_SAME_AS_LAYERS]).collect();
    if let Some(bad) = names.iter().find(|n| !all.iter().any(|r| r.matches(n))) {
        return Err(CliError::Usage(format!("unknown sweep row `{bad}`")));
    }
    Ok(all.into_iter().filter(|r| names.iter().any(|n| r.matches(n))).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RowStatus {
    Ok,
    Failed { error: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowResult {
    pub label: String,
    pub slug: String,
    #[serde(flatten)]
    pub status: RowStatus,
    #[serde(skip)]
    pub report: Option<MetricReport>,
}

impl RowResult {
    pub fn succeeded(&self) -> bool {
        self.status == RowStatus::Ok
    }
}

fn run_row(
    row: SweepRow,
    exp: &Experiment,
    data: &Dataset,
    decoder: &PretrainedDecoder,
    out: &Path,
) -> Result<MetricReport, CliError> {
    let mut settings = exp.to_settings();
    settings.activation = Some(row.activation.to_string());
    settings.norm_first = Some(row.norm_first);
    settings.heads_same_as_layers = Some(row.heads_same_as_layers);
    settings.rows = None;
    settings.out = Some(out.join(row.slug()));
    let row_exp = Experiment::resolve(&settings)?;
    let model = data.model_config(&row_exp.model)?;
    log::info!("sweep row `{}`", row.label);
    let run = train_and_evaluate(&model, &row_exp, data, decoder)?;
    write_run(&out.join(row.slug()), &settings, &model, data, &run)?;
    Ok(run.report)
}

/// Runs every selected row and writes the per-row directories, the manifest
/// and the combined tables under the experiment's output directory.
///
/// The decoder is pre-trained once and shared: pre-training never touches the
/// encoder, so every row would otherwise repeat the identical computation.
pub fn run_sweep(exp: &Experiment) -> Result<Vec<RowResult>, CliError> {
    let out = exp.out_dir()?;
    let rows = select_rows(exp.rows.as_deref())?;
    fs::create_dir_all(out)?;
    let data = load_dataset(&exp.data, exp.seed)?;
    let base = data.model_config(&exp.model)?;
    let decoder = pretrain(&base, &exp.train, exp.seed, &data)?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(exp.jobs)
        .build()
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    let results: Vec<RowResult> = pool.install(|| {
        rows.par_iter()
            .map(|&row| {
                let outcome = catch_unwind(AssertUnwindSafe(|| run_row(row, exp, &data, &decoder, out)))
                    .unwrap_or_else(|p| {
                        let msg = p
                            .downcast_ref::<String>()
                            .cloned()
                            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                            .unwrap_or_else(|| "panic".into());
                        Err(CliError::Runtime(msg))
                    });
                let (status, report) = match outcome {
                    Ok(r) => (RowStatus::Ok, Some(r)),
                    Err(e) => {
                        log::error!("sweep row `{}` failed: {e}", row.label);
                        let dir = out.join(row.slug());
                        let _ = fs::create_dir_all(&dir).and_then(|_| fs::write(dir.join(ERROR_FILE), e.to_string()));
                        (RowStatus::Failed { error: e.to_string() }, None)
                    }
                };
                RowResult {
                    label: row.label.to_string(),
                    slug: row.slug(),
                    status,
                    report,
                }
            })
            .collect()
    });
    fs::write(out.join(MANIFEST_FILE), serde_json::to_string_pretty(&results)? + "\n")?;
    write_tables(out, &results)?;
    Ok(results)
}

/// Reloads a finished sweep from its manifest and per-row reports.
pub fn load_sweep(dir: &Path) -> Result<Vec<RowResult>, CliError> {
    let text = fs::read_to_string(dir.join(MANIFEST_FILE))
        .map_err(|e| CliError::Usage(format!("{}: not a sweep directory ({e})", dir.display())))?;
    let mut rows: Vec<RowResult> = serde_json::from_str(&text)?;
    for r in &mut rows {
        if r.succeeded() {
            let report = fs::read_to_string(dir.join(&r.slug).join(REPORT_FILE))?;
            r.report = Some(serde_json::from_str(&report)?);
        }
    }
    Ok(rows)
}

pub const COLUMNS: [&str; 11] = [
    "BLEU-1",
    "BLEU-2",
    "ROUGE-1 P",
    "ROUGE-1 R",
    "ROUGE-1 F",
    "ROUGE-2 P",
    "ROUGE-2 R",
    "ROUGE-2 F",
    "ROUGE-L P",
    "ROUGE-L R",
    "ROUGE-L F",
];

pub fn score_columns(r: &MetricReport) -> [f64; 11] {
    let [r1, r2, rl] = ["1", "2", "L"].map(|k| r.rouge(k));
    [
        r.bleu(1),
        r.bleu(2),
        r1.precision,
        r1.recall,
        r1.f1,
        r2.precision,
        r2.recall,
        r2.f1,
        rl.precision,
        rl.recall,
        rl.f1,
    ]
}

pub fn markdown_table(rows: &[RowResult]) -> String {
    let mut s = String::from("| Activation Function |");
    for c in COLUMNS {
        let _ = write!(s, " {c} |");
    }
    s.push_str("\n|---|");
    s.push_str(&"---:|".repeat(COLUMNS.len()));
    s.push('\n');
    for r in rows {
        let _ = write!(s, "| {} |", r.label);
        match &r.report {
            Some(rep) => {
                for v in score_columns(rep) {
                    let _ = write!(s, " {v:.4} |");
                }
            }
            None => s.push_str(&" FAILED |".repeat(COLUMNS.len())),
        }
        s.push('\n');
    }
    s
}

pub fn csv_table(rows: &[RowResult]) -> Result<String, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(std::iter::once("activation_function").chain(COLUMNS))
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    for r in rows {
        let cells: Vec<String> = match &r.report {
            Some(rep) => score_columns(rep).iter().map(|v| v.to_string()).collect(),
            None => vec!["FAILED".to_string(); COLUMNS.len()],
        };
        w.write_record(std::iter::once(r.label.as_str()).chain(cells.iter().map(String::as_str)))
            .map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Runtime(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn write_tables(dir: &Path, rows: &[RowResult]) -> Result<(), CliError> {
    fs::write(dir.join(TABLE_MD), markdown_table(rows))?;
    fs::write(dir.join(TABLE_CSV), csv_table(rows)?)?;
    Ok(())
}
