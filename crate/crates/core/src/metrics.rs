//! BLEU and ROUGE over word tokens.
//!
//! BLEU is pooled over the corpus (clipped n-gram matches and brevity penalty
//! summed across sentences, no smoothing). ROUGE precision and recall are
//! computed per sentence and macro-averaged; the reported F comes from the
//! averaged precision and recall.

use std::collections::{BTreeMap, HashMap};
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use crate::data::vocab::{tokenize, Vocabulary};
use crate::data::SentenceSample;
use crate::error::{Error, Result};
use crate::model::{generate, GenerationConfig, ModelConfig, ModelParams};

pub const MAX_BLEU_N: usize = 4;

/// Multiset of contiguous n-grams.
pub fn ngram_counts<T: Eq + Hash + Clone>(tokens: &[T], n: usize) -> HashMap<Vec<T>, usize> {
    let mut counts = HashMap::new();
    if n == 0 || tokens.len() < n {
        return counts;
    }
    for w in tokens.windows(n) {
        *counts.entry(w.to_vec()).or_insert(0) += 1;
    }
    counts
}

/// Clipped overlap of two n-gram multisets.
fn clipped_overlap<T: Eq + Hash>(cand: &HashMap<Vec<T>, usize>, reference: &HashMap<Vec<T>, usize>) -> usize {
    cand.iter()
        .map(|(g, &c)| c.min(reference.get(g).copied().unwrap_or(0)))
        .sum()
}

/// Corpus-level sufficient statistics for BLEU.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BleuStats {
    pub matches: [usize; MAX_BLEU_N],
    pub totals: [usize; MAX_BLEU_N],
    pub candidate_len: usize,
    pub reference_len: usize,
}

impl BleuStats {
    pub fn collect<T: Eq + Hash + Clone>(candidates: &[Vec<T>], references: &[Vec<T>]) -> Result<Self> {
        if candidates.is_empty() {
            return Err(Error::Contract("BLEU needs at least one candidate".into()));
        }
        if candidates.len() != references.len() {
            return Err(Error::Dimension {
                op: "bleu",
                lhs: vec![candidates.len()],
                rhs: vec![references.len()],
            });
        }
        let mut stats = Self::default();
        for (c, r) in candidates.iter().zip(references) {
            stats.candidate_len += c.len();
            stats.reference_len += r.len();
            for n in 1..=MAX_BLEU_N {
                let cc = ngram_counts(c, n);
                stats.matches[n - 1] += clipped_overlap(&cc, &ngram_counts(r, n));
                stats.totals[n - 1] += cc.values().sum::<usize>();
            }
        }
        Ok(stats)
    }

    /// `min(1, exp(1 - r/c))`, zero for an empty candidate corpus.
    pub fn brevity_penalty(&self) -> f64 {
        if self.candidate_len == 0 {
            return 0.0;
        }
        (1.0 - self.reference_len as f64 / self.candidate_len as f64)
            .exp()
            .min(1.0)
    }

    /// Modified n-gram precision; 0 when no candidate n-grams exist.
    pub fn precision(&self, n: usize) -> f64 {
        let total = self.totals[n - 1];
        if total == 0 {
            0.0
        } else {
            self.matches[n - 1] as f64 / total as f64
        }
    }

    /// Per-n BLEU: precision of order `n` times the brevity penalty.
    pub fn bleu_n(&self, n: usize) -> f64 {
        self.precision(n) * self.brevity_penalty()
    }

    /// Geometric mean of precisions 1..=max_n times the brevity penalty.
    pub fn cumulative(&self, max_n: usize) -> f64 {
        let mut log_sum = 0.0;
        for n in 1..=max_n {
            let p = self.precision(n);
            if p == 0.0 {
                return 0.0;
            }
            log_sum += p.ln();
        }
        self.brevity_penalty() * (log_sum / max_n as f64).exp()
    }
}

fn check_order(n: usize) -> Result<()> {
    if !(1..=MAX_BLEU_N).contains(&n) {
        return Err(Error::Contract(format!(
            "n-gram order must lie in 1..={MAX_BLEU_N}, got {n}"
        )));
    }
    Ok(())
}

pub fn bleu_n<T: Eq + Hash + Clone>(candidates: &[Vec<T>], references: &[Vec<T>], n: usize) -> Result<f64> {
    check_order(n)?;
    Ok(BleuStats::collect(candidates, references)?.bleu_n(n))
}

pub fn bleu_cumulative<T: Eq + Hash + Clone>(
    candidates: &[Vec<T>],
    references: &[Vec<T>],
    max_n: usize,
) -> Result<f64> {
    check_order(max_n)?;
    Ok(BleuStats::collect(candidates, references)?.cumulative(max_n))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    pub fn from_counts(overlap: usize, candidate_total: usize, reference_total: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        Self::new(ratio(overlap, candidate_total), ratio(overlap, reference_total))
    }

    pub fn new(precision: f64, recall: f64) -> Self {
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Self { precision, recall, f1 }
    }
}

pub fn rouge_n<T: Eq + Hash + Clone>(candidate: &[T], reference: &[T], n: usize) -> Prf {
    let c = ngram_counts(candidate, n);
    let r = ngram_counts(reference, n);
    Prf::from_counts(clipped_overlap(&c, &r), c.values().sum(), r.values().sum())
}

/// Length of the longest common subsequence.
pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub fn rouge_l<T: PartialEq>(candidate: &[T], reference: &[T]) -> Prf {
    Prf::from_counts(lcs_len(candidate, reference), candidate.len(), reference.len())
}

/// Scores of one evaluation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    /// Per-order BLEU (precision of that order times brevity penalty).
    pub bleu: BTreeMap<usize, f64>,
    /// Cumulative BLEU-n (geometric mean of orders 1..=n).
    pub bleu_cumulative: BTreeMap<usize, f64>,
    /// Keys `"1"`, `"2"`, `"L"`.
    pub rouge: BTreeMap<String, Prf>,
    pub n_sentences: usize,
}

impl MetricReport {
    pub fn from_tokens(candidates: &[Vec<String>], references: &[Vec<String>]) -> Result<Self> {
        let stats = BleuStats::collect(candidates, references)?;
        let bleu = (1..=MAX_BLEU_N).map(|n| (n, stats.bleu_n(n))).collect();
        let bleu_cumulative = (1..=MAX_BLEU_N).map(|n| (n, stats.cumulative(n))).collect();
        let count = candidates.len() as f64;
        let mut rouge = BTreeMap::new();
        for key in ["1", "2", "L"] {
            let (mut p, mut r) = (0.0, 0.0);
            for (cand, reference) in candidates.iter().zip(references) {
                let s = match key {
                    "1" => rouge_n(cand, reference, 1),
                    "2" => rouge_n(cand, reference, 2),
                    _ => rouge_l(cand, reference),
                };
                p += s.precision;
                r += s.recall;
            }
            // F is recomputed from the averaged P and R.
            rouge.insert(key.to_string(), Prf::new(p / count, r / count));
        }
        Ok(Self {
            bleu,
            bleu_cumulative,
            rouge,
            n_sentences: candidates.len(),
        })
    }

    pub fn rouge(&self, key: &str) -> Prf {
        self.rouge.get(key).copied().unwrap_or_default()
    }

    pub fn bleu(&self, n: usize) -> f64 {
        self.bleu.get(&n).copied().unwrap_or(0.0)
    }

    /// Every score, for range checks.
    pub fn all_scores(&self) -> Vec<f64> {
        self.bleu
            .values()
            .chain(self.bleu_cumulative.values())
            .copied()
            .chain(self.rouge.values().flat_map(|p| [p.precision, p.recall, p.f1]))
            .collect()
    }
}

/// Produces a token-id sequence for a sample without seeing its reference.
pub trait SentenceGenerator {
    fn generate(&self, sample: &SentenceSample) -> Result<Vec<usize>>;
}

/// Beam-search generation from a trained model.
pub struct ModelGenerator<'m> {
    pub params: &'m ModelParams,
    pub config: &'m ModelConfig,
    pub generation: GenerationConfig,
}

impl SentenceGenerator for ModelGenerator<'_> {
    fn generate(&self, sample: &SentenceSample) -> Result<Vec<usize>> {
        let hyp = generate(self.params, self.config, &sample.feature_matrix(), &self.generation)?;
        Ok(hyp.content().to_vec())
    }
}

/// Test double that emits the reference itself.
pub struct CopyReference<'v>(pub &'v Vocabulary);

impl SentenceGenerator for CopyReference<'_> {
    fn generate(&self, sample: &SentenceSample) -> Result<Vec<usize>> {
        Ok(self.0.encode(&sample.text))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedSentence {
    pub sentence_id: String,
    pub reference: String,
    pub generated: String,
}

/// Generates a sentence for every sample and scores it against the reference.
pub fn evaluate_corpus(
    generator: &dyn SentenceGenerator,
    vocab: &Vocabulary,
    samples: &[SentenceSample],
) -> Result<(MetricReport, Vec<GeneratedSentence>)> {
    if samples.is_empty() {
        return Err(Error::Contract("cannot evaluate an empty test set".into()));
    }
    let mut candidates = Vec::with_capacity(samples.len());
    let mut references = Vec::with_capacity(samples.len());
    let mut outputs = Vec::with_capacity(samples.len());
    for s in samples {
        let ids = generator.generate(s)?;
        let cand = vocab.decode_tokens(&ids);
        let reference = tokenize(&s.text);
        outputs.push(GeneratedSentence {
            sentence_id: s.sentence_id.clone(),
            reference: reference.join(" "),
            generated: cand.join(" "),
        });
        candidates.push(cand);
        references.push(reference);
    }
    Ok((MetricReport::from_tokens(&candidates, &references)?, outputs))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn ngram_examples() {
        let t = toks("a b a");
        let uni = ngram_counts(&t, 1);
        assert_eq!(uni[&toks("a")], 2);
        assert_eq!(uni[&toks("b")], 1);
        let bi = ngram_counts(&t, 2);
        assert_eq!(bi.len(), 2);
        assert_eq!(bi[&toks("a b")], 1);
        assert_eq!(bi[&toks("b a")], 1);
        assert!(ngram_counts(&toks("a"), 2).is_empty());
    }

    #[test]
    fn perfect_match_bleu_one() {
        let c = vec![toks("the cat sat on the mat")];
        assert_eq!(bleu_n(&c, &c, 1).unwrap(), 1.0);
        assert_eq!(bleu_cumulative(&c, &c, 4).unwrap(), 1.0);
    }

    #[test]
    fn clipped_unigram_precision() {
        let s = bleu_n(&[toks("the the the")], &[toks("the cat")], 1).unwrap();
        assert!((s - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn single_token_bigram_is_zero() {
        assert_eq!(bleu_n(&[toks("a")], &[toks("a")], 2).unwrap(), 0.0);
    }

    #[test]
    fn brevity_penalty_applies_to_short_candidates() {
        let s = bleu_n(&[toks("a b")], &[toks("a b c d")], 1).unwrap();
        assert!((s - (1.0f64 - 2.0).exp()).abs() < 1e-15);
    }

    #[test]
    fn empty_candidate_set_is_error() {
        let empty: Vec<Vec<String>> = vec![];
        assert!(bleu_n(&empty, &empty, 1).is_err());
        assert!(bleu_n(&[toks("a")], &[toks("a")], 5).is_err());
    }

    #[test]
    fn rouge_n_examples() {
        let same = rouge_n(&toks("a b c"), &toks("a b c"), 1);
        assert_eq!((same.precision, same.recall, same.f1), (1.0, 1.0, 1.0));
        assert_eq!(rouge_n(&toks("a b"), &toks("c d"), 1), Prf::default());
        let p = rouge_n(&toks("a b c"), &toks("a c"), 1);
        assert!((p.precision - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(p.recall, 1.0);
        assert!((p.f1 - 0.8).abs() < 1e-15);
    }

    #[test]
    fn rouge_l_examples() {
        let p = rouge_l(&toks("a b c d"), &toks("a c d"));
        assert_eq!(p.precision, 0.75);
        assert_eq!(p.recall, 1.0);
        assert!((p.f1 - 6.0 / 7.0).abs() < 1e-15);
        assert_eq!(rouge_l(&toks(""), &toks("a b")), Prf::default());
        assert_eq!(
            lcs_len(&toks("x a y b"), &toks("a b z")),
            lcs_len(&toks("a b z"), &toks("x a y b"))
        );
    }

    #[test]
    fn report_scores_in_unit_interval() {
        let c = vec![toks("a b c"), toks("d e"), toks("")];
        let r = vec![toks("a c"), toks("e d f"), toks("g")];
        let rep = MetricReport::from_tokens(&c, &r).unwrap();
        assert_eq!(rep.n_sentences, 3);
        assert!(rep.all_scores().iter().all(|s| (0.0..=1.0).contains(s)));
        for key in ["1", "2", "L"] {
            let _ = rep.rouge(key);
        }
    }
}
