//! Autoregressive generation: greedy decoding and beam search.
//!
//! Generation only ever conditions on tokens it produced itself; the
//! reference sentence is never an input here.

use crate::data::vocab::{BOS, EOS, PAD};
use crate::error::Result;
use crate::model::config::ModelConfig;
use crate::model::network::decode_logits;
use crate::model::params::ModelParams;
use crate::numerics::Tensor;

/// Anything that can score the next token given a prefix that starts with BOS.
pub trait NextTokenScorer {
    fn vocab_size(&self) -> usize;

    /// Log-probabilities of every vocabulary entry as the next token.
    fn next_log_probs(&self, prefix: &[usize]) -> Result<Vec<f64>>;
}

/// Scores next tokens with the trained decoder over a fixed encoder output.
pub struct ModelScorer<'m> {
    pub params: &'m ModelParams,
    pub config: &'m ModelConfig,
    pub encoder_out: Tensor,
}

impl NextTokenScorer for ModelScorer<'_> {
    fn vocab_size(&self) -> usize {
        self.config.vocab_size
    }

    fn next_log_probs(&self, prefix: &[usize]) -> Result<Vec<f64>> {
        let logits = decode_logits(self.params, self.config, &self.encoder_out, prefix)?;
        Ok(log_softmax(logits.row(logits.rows() - 1)))
    }
}

pub fn log_softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    row.iter().map(|v| v - lse).collect()
}

/// Tokens never emitted during generation.
fn generable(token: usize) -> bool {
    token != PAD && token != BOS
}

/// A generated sequence (BOS excluded, EOS included when emitted).
#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub tokens: Vec<usize>,
    pub log_prob: f64,
}

impl Hypothesis {
    /// `log_prob / len^length_penalty`.
    pub fn score(&self, length_penalty: f64) -> f64 {
        length_normalized(self.log_prob, self.tokens.len(), length_penalty)
    }

    pub fn finished(&self) -> bool {
        self.tokens.last() == Some(&EOS)
    }

    /// Tokens with the trailing EOS removed.
    pub fn content(&self) -> &[usize] {
        match self.tokens.split_last() {
            Some((&EOS, rest)) => rest,
            _ => &self.tokens,
        }
    }
}

pub fn length_normalized(log_prob: f64, len: usize, length_penalty: f64) -> f64 {
    log_prob / (len.max(1) as f64).powf(length_penalty)
}

fn prefixed(tokens: &[usize]) -> Vec<usize> {
    let mut p = Vec::with_capacity(tokens.len() + 1);
    p.push(BOS);
    p.extend_from_slice(tokens);
    p
}

/// Picks the most probable next token at every step.
pub fn greedy_decode(scorer: &dyn NextTokenScorer, max_len: usize) -> Result<Hypothesis> {
    let mut hyp = Hypothesis {
        tokens: Vec::new(),
        log_prob: 0.0,
    };
    while hyp.tokens.len() < max_len {
        let lp = scorer.next_log_probs(&prefixed(&hyp.tokens))?;
        let (best, best_lp) =
            lp.iter()
                .enumerate()
                .filter(|(t, _)| generable(*t))
                .fold(
                    (EOS, f64::NEG_INFINITY),
                    |acc, (t, &v)| if v > acc.1 { (t, v) } else { acc },
                );
        hyp.tokens.push(best);
        hyp.log_prob += best_lp;
        if best == EOS {
            break;
        }
    }
    Ok(hyp)
}

/// Beam search over summed log-probabilities.
///
/// At each step the `beam_width` best extensions of the live beams are kept;
/// those ending in EOS move to the finished pool, shrinking the live beam.
/// Sequences still live at `max_len` are finished as-is. The result is the
/// finished hypothesis with the highest length-normalised score; the greedy
/// hypothesis is always among the candidates, so the result never scores
/// below greedy decoding.
pub fn beam_search(
    scorer: &dyn NextTokenScorer,
    beam_width: usize,
    max_len: usize,
    length_penalty: f64,
) -> Result<Hypothesis> {
    let beam_width = beam_width.max(1);
    let mut live = vec![Hypothesis {
        tokens: Vec::new(),
        log_prob: 0.0,
    }];
    let mut finished: Vec<Hypothesis> = Vec::new();

    for _ in 0..max_len {
        if live.is_empty() {
            break;
        }
        let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
        for (b, hyp) in live.iter().enumerate() {
            let lp = scorer.next_log_probs(&prefixed(&hyp.tokens))?;
            for (t, v) in lp.into_iter().enumerate().filter(|(t, _)| generable(*t)) {
                candidates.push((hyp.log_prob + v, b, t));
            }
        }
        // Stable sort keeps (beam, token) order among ties.
        candidates.sort_by(|a, b| b.0.total_cmp(&a.0));
        let mut next = Vec::with_capacity(beam_width);
        for &(log_prob, b, t) in candidates.iter().take(beam_width) {
            let mut tokens = live[b].tokens.clone();
            tokens.push(t);
            let hyp = Hypothesis { tokens, log_prob };
            if t == EOS {
                finished.push(hyp);
            } else {
                next.push(hyp);
            }
        }
        live = next;
    }
    finished.extend(live);
    finished.push(greedy_decode(scorer, max_len)?);

    let best = finished
        .into_iter()
        .reduce(|best, h| {
            if h.score(length_penalty) > best.score(length_penalty) {
                h
            } else {
                best
            }
        })
        .expect("greedy candidate always present");
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    /// Table-driven scorer over a 5-token vocabulary (PAD, BOS, EOS, a=3, b=4).
    struct Table(HashMap<Vec<usize>, Vec<f64>>);

    impl NextTokenScorer for Table {
        fn vocab_size(&self) -> usize {
            5
        }
        fn next_log_probs(&self, prefix: &[usize]) -> Result<Vec<f64>> {
            let p = self
                .0
                .get(&prefix[1..])
                .cloned()
                .unwrap_or(vec![0.0, 0.0, 0.8, 0.1, 0.1]);
            Ok(p.iter().map(|v: &f64| v.ln()).collect())
        }
    }

    fn trap() -> Table {
        // Greedy takes `a` (0.5) but `b` leads to a near-certain EOS.
        let mut m = HashMap::new();
        m.insert(vec![], vec![0.0, 0.0, 0.05, 0.5, 0.45]);
        m.insert(vec![3], vec![0.0, 0.0, 0.3, 0.35, 0.35]);
        m.insert(vec![4], vec![0.0, 0.0, 0.95, 0.025, 0.025]);
        Table(m)
    }

    #[test]
    fn greedy_follows_argmax() {
        let h = greedy_decode(&trap(), 3).unwrap();
        assert_eq!(h.tokens[0], 3);
    }

    #[test]
    fn width_one_is_greedy() {
        let s = trap();
        assert_eq!(beam_search(&s, 1, 4, 1.0).unwrap(), greedy_decode(&s, 4).unwrap());
    }

    #[test]
    fn wider_beam_escapes_trap() {
        let h = beam_search(&trap(), 2, 3, 0.0).unwrap();
        assert_eq!(h.tokens, vec![4, EOS]);
    }

    #[test]
    fn never_emits_pad_or_bos_and_respects_max_len() {
        let s = Table(HashMap::from([(vec![], vec![0.9, 0.05, 0.0, 0.05, 0.0])]));
        for width in 1..4 {
            let h = beam_search(&s, width, 2, 1.0).unwrap();
            assert!(h.tokens.iter().all(|&t| t != PAD && t != BOS));
            assert!(h.tokens.len() <= 2);
            assert!(h.finished() || h.tokens.len() == 2);
        }
    }
}
