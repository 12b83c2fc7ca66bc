//! The two-site protocol: base training, the broadcast bundle, head
//! expansion at the increment site, interleaved phantom training and the
//! comparison baselines.

pub mod bundle;
mod eval;
mod train;

use std::path::Path;

use ndarray::{concatenate, Array1, Array2, Axis};
use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::DataProvenance;
use crate::gan::GanModel;
use crate::nn::{Classifier, DenseLayer, LayerSpec, LrSchedule, Network};
use crate::{Error, Result, SeedRng};

pub use eval::{evaluate, ConfusionMatrix, Evaluation};
pub use train::{
    train_base, train_baseline_exemplar, train_baseline_naive, train_classifier, train_incremental, BaseConfig,
    BaseOutcome, EpochLog, HiddenLayer, TrainConfig, TrainLog, UpdateKind,
};

/// Seed stream labels shared by every pipeline so that equal seeds give
/// equal draws regardless of the entry point.
pub mod streams {
    pub const CLASSIFIER_INIT: u64 = 1;
    pub const SHUFFLE: u64 = 2;
    pub const PHANTOM: u64 = 3;
    pub const DROPOUT: u64 = 4;
    pub const GAN: u64 = 5;
    pub const HEAD: u64 = 6;
    pub const EXEMPLARS: u64 = 7;
}

/// Distribution of the weight columns added for new classes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadInit {
    /// Unit-variance normal entries.
    #[default]
    StandardNormal,
    /// Normal entries with standard deviation `1 / sqrt(fan_in)`.
    Scaled,
}

/// Default interleave ratio: about two real updates per phantom update for
/// every old class's worth of new classes, and at least one.
pub fn default_interleave(old_classes: usize, new_classes: usize) -> usize {
    if old_classes == 0 {
        return 1;
    }
    (2 * new_classes).div_ceil(old_classes).max(1)
}

/// Everything the increment site needs to train an expanded classifier.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IncrementPlan {
    pub old_classes: usize,
    pub total_classes: usize,
    /// Real minibatch updates per phantom update.
    pub interleave: usize,
    pub temperature: f32,
    /// Multiplier on the phantom loss; zero disables the phantom stream.
    #[serde(default = "one")]
    pub phantom_weight: f32,
    #[serde(default)]
    pub head_init: HeadInit,
    pub training: TrainConfig,
    pub seed: u64,
}

fn one() -> f32 {
    1.0
}

impl IncrementPlan {
    /// A plan with the default interleave ratio, temperature 2 and unit
    /// phantom weight.
    pub fn new(old_classes: usize, total_classes: usize, training: TrainConfig, seed: u64) -> Self {
        Self {
            old_classes,
            total_classes,
            interleave: default_interleave(old_classes, total_classes.saturating_sub(old_classes)),
            temperature: 2.0,
            phantom_weight: 1.0,
            head_init: HeadInit::StandardNormal,
            training,
            seed,
        }
    }

    /// `total_classes == old_classes` is accepted for increments that add a
    /// new domain over the same labels.
    pub fn validate(&self) -> Result<()> {
        if self.old_classes == 0 {
            return Err(Error::Config("old class count must be at least 1".into()));
        }
        if self.total_classes < self.old_classes {
            return Err(Error::Config(format!(
                "total classes {} below old classes {}",
                self.total_classes, self.old_classes
            )));
        }
        if self.interleave == 0 {
            return Err(Error::Config("interleave ratio must be at least 1".into()));
        }
        if !(self.temperature >= 1.0) || !self.temperature.is_finite() {
            return Err(Error::Config(format!("temperature {} must be >= 1", self.temperature)));
        }
        if !(self.phantom_weight >= 0.0) || !self.phantom_weight.is_finite() {
            return Err(Error::Config(format!("phantom weight {} must be >= 0", self.phantom_weight)));
        }
        self.training.validate()
    }

    /// Labels the increment data may carry.
    pub fn increment_labels(&self) -> std::ops::Range<usize> {
        if self.total_classes == self.old_classes {
            0..self.total_classes
        } else {
            self.old_classes..self.total_classes
        }
    }
}

/// Widens the classifier head to `total_classes`. The trunk and the old head
/// columns are copied bit-exactly; new columns are drawn from `init` with
/// `seed`; new bias entries are zero.
pub fn init_incremental(
    base: &Classifier<f32>,
    total_classes: usize,
    seed: u64,
    init: HeadInit,
) -> Result<Classifier<f32>> {
    let j = base.num_classes();
    if total_classes < j {
        return Err(Error::Parameter(format!(
            "cannot shrink a {j}-class head to {total_classes} classes"
        )));
    }
    let fan_in = base.head_weights().nrows();
    let std = match init {
        HeadInit::StandardNormal => 1.0,
        HeadInit::Scaled => 1.0 / (fan_in as f32).sqrt(),
    };
    let mut rng = SeedRng::seed_from_u64(seed);
    let fresh = Array2::from_shape_simple_fn((fan_in, total_classes - j), || {
        let v: f32 = StandardNormal.sample(&mut rng);
        v * std
    });
    let weights = concatenate(Axis(1), &[base.head_weights().view(), fresh.view()]).expect("same row count");
    let bias = concatenate(Axis(0), &[base.head_bias().view(), Array1::zeros(total_classes - j).view()])
        .expect("1-d");
    let mut layers: Vec<DenseLayer<f32>> = base.trunk().to_vec();
    layers.push(DenseLayer::new(weights, bias, crate::nn::Activation::Identity)?);
    Classifier::new(Network::new(layers)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BroadcastMetadata {
    pub input_dim: usize,
    pub base_class_count: usize,
    pub gan_epoch: u32,
    pub creation_seed: u64,
    pub noise_dim: usize,
    pub classifier: Vec<LayerSpec>,
    pub generator: Vec<LayerSpec>,
    pub discriminator: Vec<LayerSpec>,
    /// Descriptions of the base training data, for membrane checks at the
    /// increment site. Holds no sample content.
    #[serde(default)]
    pub base_sources: Vec<DataProvenance>,
}

/// The classifier and GAN of a base site, as they cross to an increment site.
#[derive(Clone, Debug, PartialEq)]
pub struct BroadcastBundle {
    pub classifier: Classifier<f32>,
    pub gan: GanModel,
    pub metadata: BroadcastMetadata,
    /// SHA-256 of the container file.
    pub checksum: String,
}

impl BroadcastBundle {
    pub fn new(
        classifier: Classifier<f32>,
        gan: GanModel,
        creation_seed: u64,
        base_sources: Vec<DataProvenance>,
    ) -> Result<Self> {
        if classifier.input_dim() != gan.data_dim() {
            return Err(Error::Shape(format!(
                "classifier reads {} features, GAN emits {}",
                classifier.input_dim(),
                gan.data_dim()
            )));
        }
        let metadata = BroadcastMetadata {
            input_dim: classifier.input_dim(),
            base_class_count: classifier.num_classes(),
            gan_epoch: gan.epochs_trained(),
            creation_seed,
            noise_dim: gan.noise_dim(),
            classifier: classifier.network().spec(),
            generator: gan.generator.spec(),
            discriminator: gan.discriminator.spec(),
            base_sources,
        };
        let mut bundle = Self {
            classifier,
            gan,
            metadata,
            checksum: String::new(),
        };
        let bytes = bundle.to_bytes()?;
        bundle.checksum = hex::encode(&bytes[bytes.len() - 32..]);
        Ok(bundle)
    }

    fn store(&self) -> Result<bundle::TensorStore> {
        let mut store = bundle::TensorStore::new();
        store.push_network("classifier", self.classifier.network())?;
        self.gan.push_tensors(&mut store)?;
        Ok(store)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        bundle::encode(&self.metadata, &self.store()?)
    }

    /// Writes the bundle to `path` and records its checksum.
    pub fn broadcast(&mut self, path: impl AsRef<Path>) -> Result<String> {
        self.checksum = bundle::write(path, &self.metadata, &self.store()?)?;
        Ok(self.checksum.clone())
    }

    /// Loads and verifies a bundle. Nothing is returned unless every check passes.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let (header, store, checksum) = bundle::read::<BroadcastMetadata>(path)?;
        let m = header.metadata;
        let classifier = Classifier::new(store.network("classifier", &m.classifier)?)?;
        let gan = GanModel::from_store(&store, &m.generator, &m.discriminator, m.gan_epoch)?;
        let consistent = classifier.input_dim() == m.input_dim
            && classifier.num_classes() == m.base_class_count
            && gan.noise_dim() == m.noise_dim
            && gan.data_dim() == m.input_dim;
        if !consistent {
            return Err(Error::Integrity {
                path: path.to_path_buf(),
                reason: "metadata disagrees with the stored models".into(),
            });
        }
        Ok(Self {
            classifier,
            gan,
            metadata: m,
            checksum,
        })
    }

    /// The expanded classifier an increment site starts from.
    pub fn init_incremental(&self, total_classes: usize, seed: u64, init: HeadInit) -> Result<Classifier<f32>> {
        init_incremental(&self.classifier, total_classes, seed, init)
    }
}

pub(crate) fn check_schedule(schedule: &LrSchedule) -> Result<()> {
    schedule.validate().map_err(|e| Error::Config(e.to_string()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierCheckpointMetadata {
    pub num_classes: usize,
    pub spec: Vec<LayerSpec>,
    pub seed: u64,
    #[serde(default)]
    pub sources: Vec<DataProvenance>,
}

/// Writes a classifier on its own, with the provenance of its training data.
pub fn save_classifier(
    path: impl AsRef<Path>,
    classifier: &Classifier<f32>,
    seed: u64,
    sources: Vec<DataProvenance>,
) -> Result<String> {
    let mut store = bundle::TensorStore::new();
    store.push_network("classifier", classifier.network())?;
    let metadata = ClassifierCheckpointMetadata {
        num_classes: classifier.num_classes(),
        spec: classifier.network().spec(),
        seed,
        sources,
    };
    bundle::write(path, &metadata, &store)
}

pub fn load_classifier(path: impl AsRef<Path>) -> Result<(Classifier<f32>, ClassifierCheckpointMetadata)> {
    let (header, store, _) = bundle::read::<ClassifierCheckpointMetadata>(path)?;
    let classifier = Classifier::new(store.network("classifier", &header.metadata.spec)?)?;
    Ok((classifier, header.metadata))
}
