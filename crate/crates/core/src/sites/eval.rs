use std::fmt;
use std::ops::Range;

use ndarray::Axis;
use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::nn::Classifier;
use crate::{Error, Result};

const EVAL_CHUNK: usize = 1024;

/// `counts[t][p]` is the number of test samples of true class `t`
/// predicted as class `p`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Self {
        Self {
            counts: vec![vec![0; num_classes]; num_classes],
        }
    }

    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn correct(&self) -> u64 {
        (0..self.num_classes()).map(|i| self.counts[i][i]).sum()
    }

    pub fn accuracy(&self) -> f64 {
        ratio(self.correct(), self.total())
    }

    /// Accuracy over test samples whose true label lies in `block`.
    /// `None` when the block holds no samples.
    pub fn block_accuracy(&self, block: Range<usize>) -> Option<f64> {
        let rows = block.start.min(self.num_classes())..block.end.min(self.num_classes());
        let total: u64 = rows.clone().map(|i| self.counts[i].iter().sum::<u64>()).sum();
        let correct: u64 = rows.map(|i| self.counts[i][i]).sum();
        (total > 0).then(|| ratio(correct, total))
    }

    pub fn row_sums(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Aligned integer grid, true classes down, predictions across.
impl fmt::Display for ConfusionMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let n = self.num_classes();
        let width = self
            .counts
            .iter()
            .flatten()
            .map(|v| v.to_string().len())
            .chain([n.saturating_sub(1).to_string().len(), 4])
            .max()
            .unwrap_or(1);
        write!(f, "{:>width$}", "t\\p")?;
        for p in 0..n {
            write!(f, " {p:>width$}")?;
        }
        writeln!(f)?;
        for (t, row) in self.counts.iter().enumerate() {
            write!(f, "{t:>width$}")?;
            for v in row {
                write!(f, " {v:>width$}")?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub confusion: ConfusionMatrix,
    pub accuracy: f64,
    /// Accuracy on labels below `old_classes`.
    pub old_block: Option<f64>,
    /// Accuracy on the remaining labels.
    pub new_block: Option<f64>,
}

/// Confusion matrix and accuracies of `model` on `test`, with old and new
/// blocks split at `old_classes`.
pub fn evaluate(model: &Classifier<f32>, test: &LabeledDataset, old_classes: usize) -> Result<Evaluation> {
    if test.is_empty() {
        return Err(Error::Data("cannot evaluate on an empty test set".into()));
    }
    let c = model.num_classes();
    if let Some(&label) = test.labels().iter().find(|&&l| l >= c) {
        return Err(Error::Label { label, lo: 0, hi: c });
    }
    let mut confusion = ConfusionMatrix::new(c);
    let mut start = 0;
    for chunk in test.samples().axis_chunks_iter(Axis(0), EVAL_CHUNK) {
        let predicted = model.predict(chunk)?;
        for (p, &t) in predicted.iter().zip(&test.labels()[start..]) {
            confusion.counts[t][*p] += 1;
        }
        start += chunk.nrows();
    }
    Ok(Evaluation {
        accuracy: confusion.accuracy(),
        old_block: confusion.block_accuracy(0..old_classes),
        new_block: confusion.block_accuracy(old_classes..c),
        confusion,
    })
}
