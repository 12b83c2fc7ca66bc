use ndarray::Axis;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use super::{check_schedule, streams, IncrementPlan};
use crate::data::LabeledDataset;
use crate::gan::{train_gan, EpochLosses, GanArchitecture, GanConfig, GanModel};
use crate::nn::{
    cross_entropy, soft_target_loss, softmax, temperature_softmax, temperature_softmax_backward, Activation,
    Classifier, LrSchedule, Mode, Optimizer, OptimizerState,
};
use crate::phantom::PhantomSampler;
use crate::{derive_seed, Error, Result, SeedRng};

const RUNNING_STAT_MOMENTUM: f32 = 0.1;

/// Minibatch SGD settings shared by every classifier trainer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub schedule: LrSchedule,
    pub momentum: f32,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum {} not in [0, 1)", self.momentum)));
        }
        check_schedule(&self.schedule)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateKind {
    Real,
    Phantom,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub learning_rate: f32,
    pub real_updates: usize,
    pub phantom_updates: usize,
    /// Mean cross-entropy over real minibatches.
    pub real_loss: f32,
    /// Mean squared error of the temperature head over phantom minibatches.
    pub phantom_loss: Option<f32>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
    /// Target probabilities raised to the floor inside the log.
    pub clamped: usize,
    /// Set when old-class samples were used at the increment site.
    pub membrane_violation: bool,
    /// Every update in order.
    #[serde(skip)]
    pub updates: Vec<UpdateKind>,
}

struct PhantomStream<'a> {
    sampler: &'a PhantomSampler,
    interleave: usize,
    weight: f32,
}

/// Trains `net` with cross-entropy on `data`. Shuffling, dropout and
/// phantom draws use separate streams derived from `seed`.
fn fit(
    net: &mut Classifier<f32>,
    data: &LabeledDataset,
    cfg: &TrainConfig,
    seed: u64,
    phantom: Option<PhantomStream<'_>>,
) -> Result<TrainLog> {
    cfg.validate()?;
    if data.label_range().end > net.num_classes() {
        return Err(Error::Label {
            label: data.label_range().end - 1,
            lo: 0,
            hi: net.num_classes(),
        });
    }
    if data.dim() != net.input_dim() {
        return Err(Error::Shape(format!(
            "data has {} features, classifier reads {}",
            data.dim(),
            net.input_dim()
        )));
    }
    let phantom = phantom.filter(|p| p.weight > 0.0);
    let mut opt = OptimizerState::for_network(net.network(), cfg.schedule.rate_at(0) as f32, cfg.momentum)?;
    let mut shuffle_rng = SeedRng::seed_from_u64(derive_seed(seed, streams::SHUFFLE));
    let mut phantom_rng = SeedRng::seed_from_u64(derive_seed(seed, streams::PHANTOM));
    let mut dropout_rng = SeedRng::seed_from_u64(derive_seed(seed, streams::DROPOUT));
    let mut log = TrainLog::default();
    let mut since_phantom = 0usize;

    for epoch in 0..cfg.epochs {
        opt.learning_rate = cfg.schedule.rate_at(epoch) as f32;
        let mut entry = EpochLog {
            epoch,
            learning_rate: opt.learning_rate,
            real_updates: 0,
            phantom_updates: 0,
            real_loss: 0.0,
            phantom_loss: None,
        };
        let mut phantom_sum = 0.0;
        for chunk in data.shuffled_indices(&mut shuffle_rng).chunks(cfg.batch_size) {
            let x = data.samples().select(Axis(0), chunk);
            let labels: Vec<usize> = chunk.iter().map(|&i| data.labels()[i]).collect();

            let trace = net.network().forward_trace(x.view(), Mode::Train(Some(&mut dropout_rng)))?;
            let probs = softmax(trace.output().view())?;
            let ce = cross_entropy(probs.view(), &labels)?;
            let grads = net.network().backward(&trace, ce.grad_logits.view())?;
            opt.step_network(net.network_mut(), &grads)?;
            net.network_mut().update_running_stats(&trace, RUNNING_STAT_MOMENTUM);
            entry.real_loss += ce.loss;
            entry.real_updates += 1;
            log.clamped += ce.clamped;
            log.updates.push(UpdateKind::Real);
            since_phantom += 1;

            if let Some(p) = &phantom {
                if since_phantom == p.interleave {
                    since_phantom = 0;
                    phantom_sum += phantom_step(net, &mut opt, p, chunk.len(), &mut phantom_rng, &mut dropout_rng)?;
                    entry.phantom_updates += 1;
                    log.updates.push(UpdateKind::Phantom);
                }
            }
        }
        entry.real_loss /= entry.real_updates.max(1) as f32;
        if entry.phantom_updates > 0 {
            entry.phantom_loss = Some(phantom_sum / entry.phantom_updates as f32);
        }
        log.epochs.push(entry);
    }
    Ok(log)
}

/// One update of the temperature head towards phantom soft targets.
fn phantom_step(
    net: &mut Classifier<f32>,
    opt: &mut OptimizerState<f32>,
    p: &PhantomStream<'_>,
    batch: usize,
    phantom_rng: &mut SeedRng,
    dropout_rng: &mut SeedRng,
) -> Result<f32> {
    let t = p.sampler.temperature();
    let ph = p.sampler.sample_with(batch, phantom_rng)?;
    let trace = net.network().forward_trace(ph.samples.view(), Mode::Train(Some(dropout_rng)))?;
    let probs = temperature_softmax(trace.output().view(), t)?;
    let loss = soft_target_loss(probs.view(), ph.soft_targets.view())?;
    let grad_probs = loss.grad * p.weight;
    let grad_logits = temperature_softmax_backward(probs.view(), grad_probs.view(), t)?;
    let grads = net.network().backward(&trace, grad_logits.view())?;
    opt.step_network(net.network_mut(), &grads)?;
    Ok(loss.mse)
}

/// Plain cross-entropy training of `net` on `data`.
pub fn train_classifier(
    net: &mut Classifier<f32>,
    data: &LabeledDataset,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainLog> {
    if data.is_empty() {
        return Err(Error::Data("cannot train on an empty dataset".into()));
    }
    fit(net, data, cfg, seed, None)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HiddenLayer {
    pub units: usize,
    pub activation: Activation,
}

/// Architecture and training settings of a base site.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaseConfig {
    pub hidden: Vec<HiddenLayer>,
    pub training: TrainConfig,
    pub gan: GanArchitecture,
    pub gan_training: GanConfig,
    pub gan_epochs: u32,
    pub seed: u64,
}

impl BaseConfig {
    /// A freshly initialised classifier for `num_classes` classes.
    pub fn classifier(&self, input_dim: usize, num_classes: usize) -> Result<Classifier<f32>> {
        let hidden: Vec<(usize, Activation)> = self.hidden.iter().map(|h| (h.units, h.activation)).collect();
        let mut rng = SeedRng::seed_from_u64(derive_seed(self.seed, streams::CLASSIFIER_INIT));
        Classifier::mlp(input_dim, &hidden, num_classes, &mut rng)
    }

    /// GAN settings with the seed derived from the base seed.
    pub fn gan_config(&self) -> GanConfig {
        GanConfig {
            seed: derive_seed(self.seed, streams::GAN),
            ..self.gan_training.clone()
        }
    }
}

#[derive(Clone, Debug)]
pub struct BaseOutcome {
    pub classifier: Classifier<f32>,
    pub gan: GanModel,
    pub classifier_log: TrainLog,
    pub gan_log: Vec<EpochLosses>,
}

/// Trains the base classifier on `data` (labels `0..j`) and a GAN on the same
/// samples. `on_gan_epoch` sees the GAN before training and after every epoch.
pub fn train_base(
    data: &LabeledDataset,
    cfg: &BaseConfig,
    on_gan_epoch: impl FnMut(&GanModel) -> Result<()>,
) -> Result<BaseOutcome> {
    if data.label_range().start != 0 || data.label_range().is_empty() {
        let r = data.label_range();
        return Err(Error::Label {
            label: r.start,
            lo: 0,
            hi: r.end,
        });
    }
    let mut classifier = cfg.classifier(data.dim(), data.label_range().end)?;
    let classifier_log = train_classifier(&mut classifier, data, &cfg.training, cfg.seed)?;
    let (gan, gan_log) = train_gan(&cfg.gan, data.samples().view(), &cfg.gan_config(), cfg.gan_epochs, on_gan_epoch)?;
    Ok(BaseOutcome {
        classifier,
        gan,
        classifier_log,
        gan_log,
    })
}

fn check_increment_data(data: &LabeledDataset, plan: &IncrementPlan) -> Result<()> {
    plan.validate()?;
    if data.is_empty() {
        return Err(Error::Data("increment dataset is empty".into()));
    }
    let allowed = plan.increment_labels();
    if let Some(&label) = data.labels().iter().find(|l| !allowed.contains(l)) {
        return Err(Error::Label {
            label,
            lo: allowed.start,
            hi: allowed.end,
        });
    }
    Ok(())
}

fn check_model(net: &Classifier<f32>, plan: &IncrementPlan) -> Result<()> {
    if net.num_classes() != plan.total_classes {
        return Err(Error::Config(format!(
            "classifier has {} classes, plan expects {}",
            net.num_classes(),
            plan.total_classes
        )));
    }
    Ok(())
}

/// Trains the expanded classifier on increment data, inserting one phantom
/// update after every `plan.interleave` real updates.
pub fn train_incremental(
    net: &mut Classifier<f32>,
    data: &LabeledDataset,
    sampler: &PhantomSampler,
    plan: &IncrementPlan,
) -> Result<TrainLog> {
    check_increment_data(data, plan)?;
    check_model(net, plan)?;
    if sampler.total_classes() != plan.total_classes || sampler.old_classes() != plan.old_classes {
        return Err(Error::Config(format!(
            "sampler covers {}/{} classes, plan {}/{}",
            sampler.old_classes(),
            sampler.total_classes(),
            plan.old_classes,
            plan.total_classes
        )));
    }
    if (sampler.temperature() - plan.temperature).abs() > 0.0 {
        return Err(Error::Config(format!(
            "sampler temperature {} differs from plan temperature {}",
            sampler.temperature(),
            plan.temperature
        )));
    }
    let stream = PhantomStream {
        sampler,
        interleave: plan.interleave,
        weight: plan.phantom_weight,
    };
    fit(net, data, &plan.training, plan.seed, Some(stream))
}

/// Retrains on increment data alone.
pub fn train_baseline_naive(net: &mut Classifier<f32>, data: &LabeledDataset, plan: &IncrementPlan) -> Result<TrainLog> {
    check_increment_data(data, plan)?;
    check_model(net, plan)?;
    fit(net, data, &plan.training, plan.seed, None)
}

/// Retrains on increment data mixed with `exemplars`, true-labelled old-class
/// samples that crossed the membrane. The log is marked accordingly.
pub fn train_baseline_exemplar(
    net: &mut Classifier<f32>,
    data: &LabeledDataset,
    exemplars: &LabeledDataset,
    plan: &IncrementPlan,
) -> Result<TrainLog> {
    check_increment_data(data, plan)?;
    check_model(net, plan)?;
    if exemplars.is_empty() {
        return Err(Error::Config(
            "exemplar baseline needs at least one exemplar per class; use the naive baseline instead".into(),
        ));
    }
    if let Some(&label) = exemplars.labels().iter().find(|&&l| l >= plan.old_classes) {
        return Err(Error::Label {
            label,
            lo: 0,
            hi: plan.old_classes,
        });
    }
    let all = 0..plan.total_classes;
    let union = exemplars
        .clone()
        .with_label_range(all.clone())?
        .concat(&data.clone().with_label_range(all)?)?;
    let mut log = fit(net, &union, &plan.training, plan.seed, None)?;
    log.membrane_violation = true;
    Ok(log)
}
