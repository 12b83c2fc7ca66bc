//! Increment-site methods and the comparison grid.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use phantomnet::data::{DataProvenance, LabeledDataset};
use phantomnet::gan::{GanModel, NoiseGenerator, SampleSource};
use phantomnet::nn::Classifier;
use phantomnet::phantom::PhantomSampler;
use phantomnet::sites::{
    evaluate, init_incremental, streams, train_base, train_baseline_exemplar, train_baseline_naive,
    train_incremental, BaseConfig, Evaluation, IncrementPlan, TrainLog,
};
use phantomnet::{derive_seed, Error, Result};

use crate::config::{DatasetSpec, IncrementSettings};
use crate::report::ResultRow;

/// Seed stream of the increment site, derived from a run seed.
pub const INCREMENT_STREAM: u64 = 0x1c;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Retrain on increment data alone.
    Naive,
    /// Phantom sampling from clipped Gaussian noise at temperature 1.
    Noise,
    /// Phantom sampling from the base GAN.
    Phantom,
    /// Increment data plus true-labelled old-class exemplars.
    Exemplar,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Naive => "naive",
            Method::Noise => "noise",
            Method::Phantom => "phantom",
            Method::Exemplar => "exemplar",
        }
    }
}

#[derive(Clone, Copy)]
pub struct IncrementInputs<'a> {
    pub base: &'a Classifier<f32>,
    pub gan: Option<&'a GanModel>,
    pub data: &'a LabeledDataset,
    pub exemplars: Option<&'a LabeledDataset>,
    pub total_classes: usize,
    pub settings: &'a IncrementSettings,
    pub seed: u64,
}

pub struct IncrementOutcome {
    pub classifier: Classifier<f32>,
    pub log: TrainLog,
    pub plan: IncrementPlan,
}

/// Expands `base` and trains it with `method`. Every method starts from the
/// same expanded head for a given seed.
pub fn run_method(method: Method, inputs: &IncrementInputs<'_>) -> Result<IncrementOutcome> {
    let mut plan = inputs
        .settings
        .plan(inputs.base.num_classes(), inputs.total_classes, inputs.seed);
    if method == Method::Noise {
        plan.temperature = 1.0;
    }
    let mut net = init_incremental(
        inputs.base,
        plan.total_classes,
        derive_seed(plan.seed, streams::HEAD),
        plan.head_init,
    )?;
    let log = match method {
        Method::Naive => train_baseline_naive(&mut net, inputs.data, &plan)?,
        Method::Exemplar => {
            let ex = inputs
                .exemplars
                .ok_or_else(|| Error::Config("exemplar baseline needs exemplars".into()))?;
            train_baseline_exemplar(&mut net, inputs.data, ex, &plan)?
        }
        Method::Noise | Method::Phantom => {
            let source: Arc<dyn SampleSource> = if method == Method::Noise {
                Arc::new(NoiseGenerator::new(inputs.base.input_dim()))
            } else {
                let gan = inputs
                    .gan
                    .ok_or_else(|| Error::Config("phantom sampling needs a GAN".into()))?;
                Arc::new(gan.clone())
            };
            let sampler = PhantomSampler::new(source, inputs.base.clone(), plan.temperature, plan.total_classes)?;
            train_incremental(&mut net, inputs.data, &sampler, &plan)?
        }
    };
    Ok(IncrementOutcome {
        classifier: net,
        log,
        plan,
    })
}

/// Refuses when the increment data may contain samples of the base data.
pub fn check_membrane(base_sources: &[DataProvenance], increment: &DataProvenance) -> Result<()> {
    match base_sources.iter().find(|b| b.overlaps(increment)) {
        Some(b) => Err(Error::Membrane(format!(
            "increment data {} (labels {:?}) overlaps base data {} (labels {:?})",
            increment.source, increment.labels, b.source, b.labels
        ))),
        None => Ok(()),
    }
}

/// Loads one or more test specs as a single dataset.
pub fn load_test(specs: &[DatasetSpec], root: &std::path::Path, num_classes: usize) -> Result<LabeledDataset> {
    let mut parts = specs.iter().map(|s| {
        s.load(root)
            .and_then(|(d, _)| d.with_label_range(0..num_classes))
    });
    let first = parts.next().ok_or_else(|| Error::Config("no test set given".into()))??;
    parts.try_fold(first, |acc, next| acc.concat(&next?))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub base_data: DatasetSpec,
    pub increment_data: DatasetSpec,
    pub test: Vec<DatasetSpec>,
    pub base: BaseConfig,
    pub increment: IncrementSettings,
    pub methods: Vec<Method>,
    #[serde(default = "default_temperatures")]
    pub temperatures: Vec<f32>,
    /// GAN checkpoints used for phantom sampling; the GAN trains to the largest.
    #[serde(default)]
    pub gan_epochs: Vec<u32>,
    /// Old-class exemplars per class for the exemplar baseline.
    #[serde(default)]
    pub exemplars_per_class: Vec<usize>,
    pub seeds: Vec<u64>,
}

fn default_temperatures() -> Vec<f32> {
    vec![2.0]
}

impl SweepConfig {
    pub fn max_exemplars(&self) -> Option<usize> {
        if self.methods.contains(&Method::Exemplar) {
            self.exemplars_per_class.iter().copied().max()
        } else {
            None
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepEntry {
    pub row: ResultRow,
    pub evaluation: Evaluation,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepResult {
    pub old_classes: usize,
    pub total_classes: usize,
    /// Base classifier accuracy on test samples of old classes, per seed.
    pub base_accuracy: BTreeMap<u64, f64>,
    pub entries: Vec<SweepEntry>,
}

impl SweepResult {
    pub fn rows(&self) -> Vec<ResultRow> {
        self.entries.iter().map(|e| e.row.clone()).collect()
    }
}

/// Trains one base site per seed and every requested increment method on
/// top of it.
pub fn run_sweep(cfg: &SweepConfig, root: &std::path::Path, mut progress: impl FnMut(&str)) -> Result<SweepResult> {
    if cfg.seeds.is_empty() || cfg.methods.is_empty() {
        return Err(Error::Config("sweep needs at least one seed and one method".into()));
    }
    if cfg.methods.contains(&Method::Phantom) && cfg.gan_epochs.is_empty() {
        return Err(Error::Config("phantom method needs at least one GAN epoch".into()));
    }
    if cfg.methods.contains(&Method::Exemplar) && cfg.exemplars_per_class.contains(&0) {
        return Err(Error::Config("exemplar counts must be positive; p = 0 is the naive baseline".into()));
    }
    let (base_data, base_prov) = cfg.base_data.load(root)?;
    let (inc_data, inc_prov) = cfg.increment_data.load(root)?;
    if !cfg.methods.contains(&Method::Exemplar) {
        check_membrane(std::slice::from_ref(&base_prov), &inc_prov)?;
    }
    let old_classes = base_data.label_range().end;
    let total_classes = inc_data.label_range().end.max(old_classes);
    let test = load_test(&cfg.test, root, total_classes)?;
    let old_test = test.filter(|l| l < old_classes);

    let gan_epochs = cfg.gan_epochs.iter().copied().max().unwrap_or(0);
    let mut result = SweepResult {
        old_classes,
        total_classes,
        base_accuracy: BTreeMap::new(),
        entries: Vec::new(),
    };
    for &seed in &cfg.seeds {
        let base_cfg = BaseConfig {
            seed,
            gan_epochs: if cfg.methods.contains(&Method::Phantom) { gan_epochs } else { 0 },
            ..cfg.base.clone()
        };
        let mut snapshots: BTreeMap<u32, GanModel> = BTreeMap::new();
        let base = train_base(&base_data, &base_cfg, |g| {
            if cfg.gan_epochs.contains(&g.epochs_trained()) {
                snapshots.insert(g.epochs_trained(), g.clone());
            }
            Ok(())
        })?;
        if !old_test.is_empty() {
            let acc = evaluate(&base.classifier, &old_test, old_classes)?.accuracy;
            result.base_accuracy.insert(seed, acc);
            progress(&format!("seed {seed}: base accuracy {acc:.4}"));
        }
        let inc_seed = derive_seed(seed, INCREMENT_STREAM);
        let mut push = |method: Method, p: usize, gan: Option<u32>, t: Option<f32>, out: IncrementOutcome| -> Result<()> {
            let evaluation = evaluate(&out.classifier, &test, old_classes)?;
            let row = ResultRow {
                method: method.name().to_string(),
                p,
                gan_epochs: gan,
                temperature: t,
                seed,
                combined: evaluation.accuracy,
                old_block: evaluation.old_block,
                new_block: evaluation.new_block,
            };
            progress(&row.describe());
            result.entries.push(SweepEntry { row, evaluation });
            Ok(())
        };
        for &method in &cfg.methods {
            let inputs = IncrementInputs {
                base: &base.classifier,
                gan: None,
                data: &inc_data,
                exemplars: None,
                total_classes,
                settings: &cfg.increment,
                seed: inc_seed,
            };
            match method {
                Method::Naive => push(method, 0, None, None, run_method(method, &inputs)?)?,
                Method::Noise => push(method, 0, None, Some(1.0), run_method(method, &inputs)?)?,
                Method::Phantom => {
                    for (&epochs, gan) in &snapshots {
                        for &t in &cfg.temperatures {
                            let settings = IncrementSettings {
                                temperature: t,
                                ..cfg.increment.clone()
                            };
                            let inputs = IncrementInputs {
                                gan: Some(gan),
                                settings: &settings,
                                ..inputs
                            };
                            push(method, 0, Some(epochs), Some(t), run_method(method, &inputs)?)?;
                        }
                    }
                }
                Method::Exemplar => {
                    for &p in &cfg.exemplars_per_class {
                        let ex = base_data.sample_per_class(p, derive_seed(inc_seed, streams::EXEMPLARS));
                        let inputs = IncrementInputs {
                            exemplars: Some(&ex),
                            ..inputs
                        };
                        push(method, p, None, None, run_method(method, &inputs)?)?;
                    }
                }
            }
        }
    }
    Ok(result)
}
