use std::ops::Range;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;

use crate::{Error, Result, SeedRng};

/// Samples in `[-1, 1]^d` with integer labels from a declared range.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    samples: Array2<f32>,
    labels: Vec<usize>,
    label_range: Range<usize>,
}

/// Tolerance on the `[-1, 1]` sample range for values produced by float arithmetic.
pub const RANGE_TOLERANCE: f32 = 1e-6;

pub(crate) fn check_range(samples: &Array2<f32>) -> Result<()> {
    for &v in samples.iter() {
        if !v.is_finite() {
            return Err(Error::NonFinite("dataset sample".into()));
        }
        if v.abs() > 1.0 + RANGE_TOLERANCE {
            return Err(Error::DataRange { value: v });
        }
    }
    Ok(())
}

impl LabeledDataset {
    pub fn new(samples: Array2<f32>, labels: Vec<usize>, label_range: Range<usize>) -> Result<Self> {
        if samples.nrows() != labels.len() {
            return Err(Error::Consistency(format!(
                "{} samples but {} labels",
                samples.nrows(),
                labels.len()
            )));
        }
        if let Some(&label) = labels.iter().find(|l| !label_range.contains(l)) {
            return Err(Error::Label {
                label,
                lo: label_range.start,
                hi: label_range.end,
            });
        }
        check_range(&samples)?;
        Ok(Self {
            samples,
            labels,
            label_range,
        })
    }

    /// A dataset with no rows in `d` dimensions.
    pub fn empty(d: usize, label_range: Range<usize>) -> Self {
        Self {
            samples: Array2::zeros((0, d)),
            labels: Vec::new(),
            label_range,
        }
    }

    pub fn samples(&self) -> &Array2<f32> {
        &self.samples
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn label_range(&self) -> Range<usize> {
        self.label_range.clone()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.samples.ncols()
    }

    /// Sample counts per label over the declared range.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.label_range.end];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Labels that actually occur, ascending.
    pub fn present_labels(&self) -> Vec<usize> {
        self.class_counts()
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .map(|(l, _)| l)
            .collect()
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            samples: self.samples.select(Axis(0), indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            label_range: self.label_range.clone(),
        }
    }

    /// Rows whose label satisfies `keep`, in original order.
    pub fn filter(&self, mut keep: impl FnMut(usize) -> bool) -> Self {
        let idx: Vec<usize> = (0..self.len()).filter(|&i| keep(self.labels[i])).collect();
        self.subset(&idx)
    }

    pub fn with_label_range(mut self, label_range: Range<usize>) -> Result<Self> {
        if let Some(&label) = self.labels.iter().find(|l| !label_range.contains(l)) {
            return Err(Error::Label {
                label,
                lo: label_range.start,
                hi: label_range.end,
            });
        }
        self.label_range = label_range;
        Ok(self)
    }

    /// Concatenates two datasets of the same dimensionality; the label range
    /// becomes the union hull.
    pub fn concat(&self, other: &Self) -> Result<Self> {
        if self.dim() != other.dim() {
            return Err(Error::Shape(format!(
                "cannot concatenate {}-d and {}-d datasets",
                self.dim(),
                other.dim()
            )));
        }
        let samples = ndarray::concatenate(Axis(0), &[self.samples.view(), other.samples.view()])
            .expect("column counts checked");
        let mut labels = self.labels.clone();
        labels.extend_from_slice(&other.labels);
        let lo = self.label_range.start.min(other.label_range.start);
        let hi = self.label_range.end.max(other.label_range.end);
        Ok(Self {
            samples,
            labels,
            label_range: lo..hi,
        })
    }

    /// Up to `per_class` rows of every present class drawn uniformly at random.
    pub fn sample_per_class(&self, per_class: usize, seed: u64) -> Self {
        let mut rng = SeedRng::seed_from_u64(seed);
        let mut picked = Vec::new();
        for label in self.present_labels() {
            let mut idx: Vec<usize> = (0..self.len()).filter(|&i| self.labels[i] == label).collect();
            idx.shuffle(&mut rng);
            idx.truncate(per_class);
            picked.extend(idx);
        }
        picked.sort_unstable();
        self.subset(&picked)
    }

    /// Deterministic shuffled index order for one epoch.
    pub fn shuffled_indices(&self, rng: &mut SeedRng) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(rng);
        idx
    }

    pub(crate) fn into_parts(self) -> (Array2<f32>, Vec<usize>, Range<usize>) {
        (self.samples, self.labels, self.label_range)
    }
}
