//! Deterministic synthetic corpus: every vocabulary word owns a Gaussian
//! signature over the electrodes, and each occurrence of the word emits 1 to
//! 4 noisy recordings of that signature.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::eeg::WordEegRecording;
use crate::data::interchange::RawSentence;
use crate::data::SentenceSample;
use crate::error::{Error, Result};

pub const MIN_SYNTHETIC_VOCAB: usize = 10;
pub const MAX_RECORDINGS_PER_WORD: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticParams {
    pub vocab_size: usize,
    pub n_sentences: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub electrodes: usize,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SyntheticParams {
    fn default() -> Self {
        Self {
            vocab_size: 30,
            n_sentences: 300,
            min_len: 4,
            max_len: 8,
            electrodes: 105,
            noise_std: 0.05,
            seed: 13,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub words: Vec<String>,
    /// `signatures[i]` is the latent EEG signature of `words[i]`.
    pub signatures: Vec<Vec<f64>>,
    pub sentences: Vec<RawSentence>,
    /// Word indices of every sentence, parallel to `sentences`.
    pub word_ids: Vec<Vec<usize>>,
}

impl SyntheticParams {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.vocab_size < MIN_SYNTHETIC_VOCAB {
            problems.push(format!(
                "synthetic vocab must be >= {MIN_SYNTHETIC_VOCAB}, got {}",
                self.vocab_size
            ));
        }
        if self.min_len < 1 || self.min_len > self.max_len {
            problems.push(format!(
                "invalid sentence length range {}..={}",
                self.min_len, self.max_len
            ));
        }
        if self.electrodes < 1 {
            problems.push("electrodes must be >= 1".into());
        }
        if !(self.noise_std >= 0.0) || !self.noise_std.is_finite() {
            problems.push(format!("noise_std must be finite and >= 0, got {}", self.noise_std));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }
}

pub fn synthetic_word(i: usize) -> String {
    format!("w{i}")
}

/// Generates the raw (per-recording) corpus.
pub fn gen_synthetic_raw(p: &SyntheticParams) -> Result<SyntheticCorpus> {
    p.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let unit = Normal::new(0.0, 1.0).expect("valid normal");
    let words: Vec<String> = (0..p.vocab_size).map(synthetic_word).collect();
    let signatures: Vec<Vec<f64>> = (0..p.vocab_size)
        .map(|_| (0..p.electrodes).map(|_| unit.sample(&mut rng)).collect())
        .collect();
    let mut sentences = Vec::with_capacity(p.n_sentences);
    let mut word_ids = Vec::with_capacity(p.n_sentences);
    for s in 0..p.n_sentences {
        let len = rng.random_range(p.min_len..=p.max_len);
        let ids: Vec<usize> = (0..len).map(|_| rng.random_range(0..p.vocab_size)).collect();
        let words_eeg = ids
            .iter()
            .map(|&w| {
                let n = rng.random_range(1..=MAX_RECORDINGS_PER_WORD);
                let samples = (0..n)
                    .map(|_| {
                        signatures[w]
                            .iter()
                            .map(|&sig| {
                                if p.noise_std > 0.0 {
                                    sig + p.noise_std * unit.sample(&mut rng)
                                } else {
                                    sig
                                }
                            })
                            .collect()
                    })
                    .collect();
                WordEegRecording::new(samples)
            })
            .collect();
        let text = ids.iter().map(|&w| words[w].as_str()).collect::<Vec<_>>().join(" ");
        sentences.push(RawSentence {
            sentence_id: format!("syn-{s:05}"),
            text,
            words: words_eeg,
        });
        word_ids.push(ids);
    }
    Ok(SyntheticCorpus {
        words,
        signatures,
        sentences,
        word_ids,
    })
}

/// Generates the corpus and averages every word's recordings.
pub fn gen_synthetic(p: &SyntheticParams) -> Result<Vec<SentenceSample>> {
    gen_synthetic_raw(p)?
        .sentences
        .iter()
        .map(SentenceSample::from_raw)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(noise: f64) -> SyntheticParams {
        SyntheticParams {
            vocab_size: 12,
            n_sentences: 40,
            electrodes: 6,
            noise_std: noise,
            seed: 3,
            ..Default::default()
        }
    }

    #[test]
    fn zero_noise_recovers_signatures() {
        let c = gen_synthetic_raw(&params(0.0)).unwrap();
        let samples = gen_synthetic(&params(0.0)).unwrap();
        for (s, ids) in samples.iter().zip(&c.word_ids) {
            for (feat, &w) in s.word_features.iter().zip(ids) {
                assert_eq!(feat.data(), c.signatures[w].as_slice());
            }
        }
    }

    #[test]
    fn same_seed_same_corpus() {
        assert_eq!(
            gen_synthetic_raw(&params(0.1)).unwrap(),
            gen_synthetic_raw(&params(0.1)).unwrap()
        );
    }

    #[test]
    fn signatures_pairwise_distinct() {
        let c = gen_synthetic_raw(&params(0.1)).unwrap();
        let mut min = f64::INFINITY;
        for i in 0..c.signatures.len() {
            for j in i + 1..c.signatures.len() {
                let d: f64 = c.signatures[i]
                    .iter()
                    .zip(&c.signatures[j])
                    .map(|(a, b)| (a - b).powi(2))
                    .sum::<f64>()
                    .sqrt();
                min = min.min(d);
            }
        }
        assert!(min > 0.0);
    }

    #[test]
    fn recordings_per_word_in_range() {
        let c = gen_synthetic_raw(&params(0.1)).unwrap();
        for s in &c.sentences {
            let n = s.words.len();
            assert!((4..=8).contains(&n));
            assert!(s
                .words
                .iter()
                .all(|w| (1..=MAX_RECORDINGS_PER_WORD).contains(&w.recordings())));
        }
    }

    #[test]
    fn small_vocab_rejected() {
        let p = SyntheticParams {
            vocab_size: 9,
            ..params(0.0)
        };
        assert!(gen_synthetic_raw(&p).is_err());
    }
}
