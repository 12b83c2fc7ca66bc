//! Bounded-continual learning: a sequence of increments, one GAN kept per
//! increment and a frozen labeler snapshot taken before every step.

use std::ops::Range;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::gan::{train_gan, EpochLosses, GanModel, SampleSource};
use crate::nn::Classifier;
use crate::phantom::{PhantomBatch, PhantomSampler};
use crate::sites::{
    default_interleave, evaluate, init_incremental, streams, train_base, train_baseline_naive, train_incremental,
    BaseConfig, Evaluation, HeadInit, IncrementPlan, TrainConfig, TrainLog,
};
use crate::{derive_seed, Error, Result};

/// Samples from a GAN chosen uniformly per batch, labelled by `labeler` at
/// temperature `t` and padded to `total_classes`.
pub fn mixture_phantom_sample(
    gans: &[Arc<GanModel>],
    labeler: &Classifier<f32>,
    temperature: f32,
    total_classes: usize,
    batch: usize,
    seed: u64,
) -> Result<PhantomBatch> {
    mixture_sampler(gans, labeler.clone(), temperature, total_classes)?.sample(batch, seed)
}

fn mixture_sampler(
    gans: &[Arc<GanModel>],
    labeler: Classifier<f32>,
    temperature: f32,
    total_classes: usize,
) -> Result<PhantomSampler> {
    let sources: Vec<Arc<dyn SampleSource>> = gans.iter().map(|g| g.clone() as Arc<dyn SampleSource>).collect();
    PhantomSampler::mixture(sources, labeler, temperature, total_classes)
}

/// Rejects schedules whose blocks overlap, leave gaps or are empty. The
/// blocks must tile `0..c` in order.
pub fn check_schedule(schedule: &[Range<usize>]) -> Result<()> {
    if schedule.is_empty() {
        return Err(Error::Config("class schedule is empty".into()));
    }
    let mut next = 0;
    for (i, block) in schedule.iter().enumerate() {
        if block.is_empty() {
            return Err(Error::Config(format!("increment {i} has no classes")));
        }
        if block.start < next {
            return Err(Error::Config(format!(
                "increment {i} labels {block:?} overlap an earlier increment"
            )));
        }
        if block.start > next {
            return Err(Error::Config(format!(
                "labels {next}..{} belong to no increment",
                block.start
            )));
        }
        next = block.end;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContinualConfig {
    pub schedule: Vec<Range<usize>>,
    /// Classifier architecture and first-increment training. Its GAN
    /// settings apply to every increment.
    pub base: BaseConfig,
    pub training: TrainConfig,
    pub temperature: f32,
    /// Fixed interleave ratio; by default derived from the class counts of
    /// each step.
    #[serde(default)]
    pub interleave: Option<usize>,
    #[serde(default = "one")]
    pub phantom_weight: f32,
    #[serde(default)]
    pub head_init: HeadInit,
    pub seed: u64,
}

fn one() -> f32 {
    1.0
}

impl ContinualConfig {
    /// Base settings of step 0, with the step seed.
    pub fn base_config(&self) -> BaseConfig {
        BaseConfig {
            seed: self.step_seed(0),
            ..self.base.clone()
        }
    }

    pub fn step_seed(&self, step: usize) -> u64 {
        derive_seed(self.seed, step as u64)
    }

    /// Plan for step `step >= 1`.
    pub fn plan(&self, step: usize) -> IncrementPlan {
        let old = self.schedule[step].start;
        let total = self.schedule[step].end;
        IncrementPlan {
            old_classes: old,
            total_classes: total,
            interleave: self.interleave.unwrap_or_else(|| default_interleave(old, total - old)),
            temperature: self.temperature,
            phantom_weight: self.phantom_weight,
            head_init: self.head_init,
            training: self.training.clone(),
            seed: self.step_seed(step),
        }
    }

    /// Seed of the GAN trained on the data of step `step`.
    pub fn gan_seed(&self, step: usize) -> u64 {
        derive_seed(self.step_seed(step), streams::GAN)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: usize,
    pub classes: Range<usize>,
    pub classifier_log: TrainLog,
    pub gan_log: Vec<EpochLosses>,
    pub interleave: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct ContinualState {
    classifier: Option<Classifier<f32>>,
    gans: Vec<Arc<GanModel>>,
    labeler: Option<Classifier<f32>>,
    schedule: Vec<Range<usize>>,
}

impl ContinualState {
    pub fn new(schedule: Vec<Range<usize>>) -> Result<Self> {
        check_schedule(&schedule)?;
        Ok(Self {
            classifier: None,
            gans: Vec::new(),
            labeler: None,
            schedule,
        })
    }

    pub fn classifier(&self) -> Option<&Classifier<f32>> {
        self.classifier.as_ref()
    }

    pub fn gans(&self) -> &[Arc<GanModel>] {
        &self.gans
    }

    /// Snapshot used to label phantom samples during the latest step.
    pub fn labeler(&self) -> Option<&Classifier<f32>> {
        self.labeler.as_ref()
    }

    pub fn schedule(&self) -> &[Range<usize>] {
        &self.schedule
    }

    pub fn completed(&self) -> usize {
        self.gans.len()
    }

    pub fn is_finished(&self) -> bool {
        self.completed() == self.schedule.len()
    }

    fn next_block(&self, data: &LabeledDataset) -> Result<(usize, Range<usize>)> {
        let step = self.completed();
        let block = self
            .schedule
            .get(step)
            .cloned()
            .ok_or_else(|| Error::State("every scheduled increment is complete".into()))?;
        if let Some(&label) = data.labels().iter().find(|l| !block.contains(l)) {
            return Err(Error::Label {
                label,
                lo: block.start,
                hi: block.end,
            });
        }
        if data.is_empty() {
            return Err(Error::Data(format!("increment {step} has no data")));
        }
        Ok((step, block))
    }
}

fn as_block(data: &LabeledDataset, block: &Range<usize>) -> Result<LabeledDataset> {
    data.clone().with_label_range(block.clone())
}

/// Runs the next increment: snapshot the labeler, expand the head, train
/// with phantoms from every stored GAN, then train and keep a GAN on `data`.
/// The first step is ordinary base training.
pub fn continual_step(state: &mut ContinualState, data: &LabeledDataset, cfg: &ContinualConfig) -> Result<StepMetrics> {
    check_schedule(&cfg.schedule)?;
    if cfg.schedule != state.schedule {
        return Err(Error::Config("configuration schedule differs from the state schedule".into()));
    }
    let (step, block) = state.next_block(data)?;
    let data = as_block(data, &block)?;

    if step == 0 {
        let base = cfg.base_config();
        let data = data.with_label_range(0..block.end)?;
        let out = train_base(&data, &base, |_| Ok(()))?;
        state.classifier = Some(out.classifier);
        state.gans.push(Arc::new(out.gan));
        return Ok(StepMetrics {
            step,
            classes: block,
            classifier_log: out.classifier_log,
            gan_log: out.gan_log,
            interleave: None,
        });
    }

    let plan = cfg.plan(step);
    let current = state.classifier.take().expect("step 0 trains a classifier");
    let labeler = current.clone();
    let sampler = mixture_sampler(&state.gans, labeler.clone(), plan.temperature, plan.total_classes)?;
    let mut next = init_incremental(
        &current,
        plan.total_classes,
        derive_seed(plan.seed, streams::HEAD),
        plan.head_init,
    )?;
    state.labeler = Some(labeler);
    let classifier_log = train_incremental(&mut next, &data, &sampler, &plan)?;
    state.classifier = Some(next);

    let (gan, gan_log) = train_gan(
        &cfg.base.gan,
        data.samples().view(),
        &crate::gan::GanConfig {
            seed: cfg.gan_seed(step),
            ..cfg.base.gan_training.clone()
        },
        cfg.base.gan_epochs,
        |_| Ok(()),
    )?;
    state.gans.push(Arc::new(gan));
    Ok(StepMetrics {
        step,
        classes: block,
        classifier_log,
        gan_log,
        interleave: Some(plan.interleave),
    })
}

/// Sequential retraining on each increment alone, with the same head
/// expansion and seeds but no phantom stream and no GANs.
pub fn naive_sequential(increments: &[LabeledDataset], cfg: &ContinualConfig) -> Result<Classifier<f32>> {
    check_schedule(&cfg.schedule)?;
    if increments.len() != cfg.schedule.len() {
        return Err(Error::Config(format!(
            "{} datasets for {} scheduled increments",
            increments.len(),
            cfg.schedule.len()
        )));
    }
    let base = cfg.base_config();
    let first = as_block(&increments[0], &cfg.schedule[0])?.with_label_range(0..cfg.schedule[0].end)?;
    let mut net = base.classifier(first.dim(), cfg.schedule[0].end)?;
    crate::sites::train_classifier(&mut net, &first, &base.training, base.seed)?;
    for (step, data) in increments.iter().enumerate().skip(1) {
        let plan = cfg.plan(step);
        let data = as_block(data, &cfg.schedule[step])?;
        let mut next = init_incremental(&net, plan.total_classes, derive_seed(plan.seed, streams::HEAD), plan.head_init)?;
        train_baseline_naive(&mut next, &data, &plan)?;
        net = next;
    }
    Ok(net)
}

/// Accuracy on every scheduled block plus the combined evaluation.
pub fn evaluate_blocks(
    model: &Classifier<f32>,
    test: &LabeledDataset,
    schedule: &[Range<usize>],
) -> Result<(Evaluation, Vec<Option<f64>>)> {
    let eval = evaluate(model, test, schedule.first().map_or(0, |b| b.end))?;
    let blocks = schedule.iter().map(|b| eval.confusion.block_accuracy(b.clone())).collect();
    Ok((eval, blocks))
}
