use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MIN_SPLIT_SAMPLES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub valid_fraction: f64,
    pub test_fraction: f64,
    pub seed: u64,
}

impl SplitSpec {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_fraction: 0.8,
            valid_fraction: 0.1,
            test_fraction: 0.1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split<T> {
    pub train: Vec<T>,
    pub valid: Vec<T>,
    pub test: Vec<T>,
}

/// Seeded shuffle followed by contiguous cuts at the cumulative fractions.
pub fn split<T: Clone>(items: &[T], spec: &SplitSpec) -> Result<Split<T>> {
    let fractions = [spec.train_fraction, spec.valid_fraction, spec.test_fraction];
    if fractions.iter().any(|f| *f < 0.0) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Config(vec![format!(
            "split fractions {fractions:?} must be non-negative and sum to 1"
        )]));
    }
    let n = items.len();
    if n < MIN_SPLIT_SAMPLES {
        return Err(Error::Contract(format!(
            "need at least {MIN_SPLIT_SAMPLES} samples to split, got {n}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let first = (n as f64 * spec.train_fraction).round() as usize;
    let second = (n as f64 * (spec.train_fraction + spec.valid_fraction)).round() as usize;
    let pick = |range: &[usize]| range.iter().map(|&i| items[i].clone()).collect();
    Ok(Split {
        train: pick(&order[..first]),
        valid: pick(&order[first..second]),
        test: pick(&order[second..]),
    })
}
