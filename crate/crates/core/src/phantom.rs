//! Phantom sampling: generated inputs paired with the frozen base
//! classifier's softened beliefs, zero-padded over classes it never saw.

use std::sync::Arc;

use ndarray::{s, Array2, ArrayView2};
use rand::{Rng, SeedableRng};

use crate::gan::SampleSource;
use crate::nn::{temperature_softmax, Classifier};
use crate::{Error, Result, SeedRng};

#[derive(Clone, Debug, PartialEq)]
pub struct PhantomBatch {
    pub samples: Array2<f32>,
    pub soft_targets: Array2<f32>,
    /// Which generator produced the batch.
    pub source_index: usize,
}

/// Copies `soft` into the left block of a `[B × c]` array of zeros.
pub fn expand_targets(soft: ArrayView2<f32>, total_classes: usize) -> Result<Array2<f32>> {
    let j = soft.ncols();
    if total_classes < j {
        return Err(Error::Parameter(format!(
            "cannot expand {j} target columns to {total_classes}"
        )));
    }
    let mut out = Array2::zeros((soft.nrows(), total_classes));
    out.slice_mut(s![.., ..j]).assign(&soft);
    Ok(out)
}

/// Immutable after construction; the labeler is only ever run forward.
#[derive(Clone, Debug)]
pub struct PhantomSampler {
    sources: Vec<Arc<dyn SampleSource>>,
    labeler: Classifier<f32>,
    temperature: f32,
    total_classes: usize,
}

impl PhantomSampler {
    pub fn new(
        source: Arc<dyn SampleSource>,
        labeler: Classifier<f32>,
        temperature: f32,
        total_classes: usize,
    ) -> Result<Self> {
        Self::mixture(vec![source], labeler, temperature, total_classes)
    }

    /// A sampler that picks one of `sources` uniformly for every batch.
    pub fn mixture(
        sources: Vec<Arc<dyn SampleSource>>,
        labeler: Classifier<f32>,
        temperature: f32,
        total_classes: usize,
    ) -> Result<Self> {
        if sources.is_empty() {
            return Err(Error::Config("phantom sampler needs at least one generator".into()));
        }
        if !(temperature >= 1.0) || !temperature.is_finite() {
            return Err(Error::Parameter(format!("temperature must be finite and >= 1, got {temperature}")));
        }
        if total_classes < labeler.num_classes() {
            return Err(Error::Parameter(format!(
                "total classes {total_classes} below labeler classes {}",
                labeler.num_classes()
            )));
        }
        for (i, src) in sources.iter().enumerate() {
            if src.output_dim() != labeler.input_dim() {
                return Err(Error::Shape(format!(
                    "generator {i} emits {} features, labeler expects {}",
                    src.output_dim(),
                    labeler.input_dim()
                )));
            }
        }
        Ok(Self {
            sources,
            labeler,
            temperature,
            total_classes,
        })
    }

    pub fn labeler(&self) -> &Classifier<f32> {
        &self.labeler
    }

    pub fn sources(&self) -> &[Arc<dyn SampleSource>] {
        &self.sources
    }

    pub fn temperature(&self) -> f32 {
        self.temperature
    }

    pub fn old_classes(&self) -> usize {
        self.labeler.num_classes()
    }

    pub fn total_classes(&self) -> usize {
        self.total_classes
    }

    pub fn input_dim(&self) -> usize {
        self.labeler.input_dim()
    }

    /// Draws one batch; bit-reproducible for a given seed.
    pub fn sample(&self, batch: usize, seed: u64) -> Result<PhantomBatch> {
        self.sample_with(batch, &mut SeedRng::seed_from_u64(seed))
    }

    /// Draws one batch from a caller-owned stream. A single-source sampler
    /// consumes no randomness for source selection.
    pub fn sample_with(&self, batch: usize, rng: &mut SeedRng) -> Result<PhantomBatch> {
        if batch == 0 {
            return Err(Error::Parameter("phantom batch size must be positive".into()));
        }
        let source_index = match self.sources.len() {
            1 => 0,
            n => rng.random_range(0..n),
        };
        let samples = self.sources[source_index].generate(batch, rng)?;
        let soft_targets = self.label(samples.view())?;
        Ok(PhantomBatch {
            samples,
            soft_targets,
            source_index,
        })
    }

    /// Padded temperature-softmax targets for arbitrary inputs.
    pub fn label(&self, samples: ArrayView2<f32>) -> Result<Array2<f32>> {
        let logits = self.labeler.logits(samples)?;
        let soft = temperature_softmax(logits.view(), self.temperature)?;
        expand_targets(soft.view(), self.total_classes)
    }
}
