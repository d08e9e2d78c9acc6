//! Data path: raw word EEG to averaged features, interchange files,
//! synthetic corpora, tokenization and splitting.

pub mod eeg;
pub mod interchange;
pub mod split;
pub mod synthetic;
pub mod vocab;

pub use eeg::{average_word_eeg, WordEegRecording};
pub use interchange::{load_zuco_jsonl, read_interchange, write_interchange, RawSentence};
pub use split::{split, Split, SplitSpec};
pub use synthetic::{gen_synthetic, gen_synthetic_raw, SyntheticCorpus, SyntheticParams};
pub use vocab::{tokenize, Vocabulary};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// One sentence ready for the model: averaged word features plus target text.
#[derive(Debug, Clone, PartialEq)]
pub struct SentenceSample {
    pub sentence_id: String,
    /// One vector of length `electrodes` per word.
    pub word_features: Vec<Tensor>,
    pub text: String,
    /// `[BOS, .., EOS]` once [`SentenceSample::encode_with`] has run.
    pub token_ids: Vec<usize>,
}

impl SentenceSample {
    /// Averages every word of a raw sentence.
    pub fn from_raw(raw: &RawSentence) -> Result<Self> {
        if raw.words.is_empty() {
            return Err(Error::MissingData(format!("sentence {} has no words", raw.sentence_id)));
        }
        let word_features = raw.words.iter().map(average_word_eeg).collect::<Result<Vec<_>>>()?;
        Ok(Self {
            sentence_id: raw.sentence_id.clone(),
            word_features,
            text: raw.text.clone(),
            token_ids: Vec::new(),
        })
    }

    pub fn electrodes(&self) -> usize {
        self.word_features.first().map_or(0, Tensor::len)
    }

    /// Word features stacked into a `[words, electrodes]` matrix.
    pub fn feature_matrix(&self) -> Tensor {
        let rows: Vec<Vec<f64>> = self.word_features.iter().map(|t| t.data().to_vec()).collect();
        Tensor::from_rows(&rows).expect("constant electrode count")
    }

    pub fn encode_with(&mut self, vocab: &Vocabulary) {
        self.token_ids = vocab.encode(&self.text);
    }
}

/// Tokenizes every sample against `vocab`.
pub fn encode_all(samples: &mut [SentenceSample], vocab: &Vocabulary) {
    for s in samples {
        s.encode_with(vocab);
    }
}
