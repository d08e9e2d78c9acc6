//! Line-delimited JSON interchange format: one sentence per line with fields
//! `sentence_id`, `text` and `words` (per word, a list of recordings, each a
//! list of electrode values).

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::eeg::WordEegRecording;
use crate::data::SentenceSample;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawSentence {
    pub sentence_id: String,
    pub text: String,
    pub words: Vec<WordEegRecording>,
}

/// Parses an interchange file, validating a constant electrode count.
pub fn read_interchange(path: &Path) -> Result<Vec<RawSentence>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    let mut electrodes: Option<usize> = None;
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: lineno,
            message,
        };
        let raw: RawSentence = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        for row in raw.words.iter().flat_map(|w| &w.samples) {
            match electrodes {
                None => electrodes = Some(row.len()),
                Some(e) if e != row.len() => {
                    return Err(parse_err(format!(
                        "electrode count {} differs from the dataset's {e}",
                        row.len()
                    )))
                }
                Some(_) => {}
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(parse_err("non-finite EEG value".into()));
            }
        }
        out.push(raw);
    }
    Ok(out)
}

/// Loads and averages an interchange file. Sentences containing a word with
/// no recordings (or no words at all) are dropped and counted in the log.
pub fn load_zuco_jsonl(path: &Path) -> Result<Vec<SentenceSample>> {
    let raw = read_interchange(path)?;
    let total = raw.len();
    let samples: Vec<SentenceSample> = raw
        .iter()
        .filter(|r| !r.words.is_empty() && r.words.iter().all(|w| w.recordings() > 0))
        .map(SentenceSample::from_raw)
        .collect::<Result<_>>()?;
    let dropped = total - samples.len();
    if dropped > 0 {
        log::warn!(
            "{}: dropped {dropped} of {total} sentences with missing EEG",
            path.display()
        );
    }
    Ok(samples)
}

pub fn write_interchange(path: &Path, sentences: &[RawSentence]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for s in sentences {
        serde_json::to_writer(&mut w, s)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}
