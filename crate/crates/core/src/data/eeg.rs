use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Raw EEG of one word: one row per recording, one column per electrode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct WordEegRecording {
    pub samples: Vec<Vec<f64>>,
}

impl WordEegRecording {
    pub fn new(samples: Vec<Vec<f64>>) -> Self {
        Self { samples }
    }

    pub fn recordings(&self) -> usize {
        self.samples.len()
    }

    /// Electrode count, if there is at least one recording.
    pub fn electrodes(&self) -> Option<usize> {
        self.samples.first().map(Vec::len)
    }
}

/// Mean over the recordings axis, producing one value per electrode.
pub fn average_word_eeg(rec: &WordEegRecording) -> Result<Tensor> {
    let Some(electrodes) = rec.electrodes() else {
        return Err(Error::MissingData("word has no EEG recordings".into()));
    };
    // Running mean: identical recordings average to themselves bit for bit.
    let mut mean = vec![0.0; electrodes];
    for (k, row) in rec.samples.iter().enumerate() {
        if row.len() != electrodes {
            return Err(Error::Dimension {
                op: "average_word_eeg",
                lhs: vec![electrodes],
                rhs: vec![row.len()],
            });
        }
        let n = (k + 1) as f64;
        for (m, v) in mean.iter_mut().zip(row) {
            *m += (v - *m) / n;
        }
    }
    Ok(Tensor::vector(mean))
}
