//! Finite-difference verification over randomly drawn networks.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use phantomnet::nn::{gradient_check, softmax, Activation, CheckLoss, LayerSpec, Network};
use phantomnet::{derive_seed, Error, Result, SeedRng};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradientSuiteConfig {
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_per_tensor")]
    pub per_tensor: usize,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default = "default_batch")]
    pub batch: usize,
    pub seed: u64,
}

fn default_trials() -> usize {
    100
}

fn default_epsilon() -> f64 {
    1e-5
}

fn default_per_tensor() -> usize {
    16
}

fn default_tolerance() -> f64 {
    1e-4
}

fn default_batch() -> usize {
    4
}

impl GradientSuiteConfig {
    pub fn new(trials: usize, seed: u64) -> Self {
        Self {
            trials,
            epsilon: default_epsilon(),
            per_tensor: default_per_tensor(),
            tolerance: default_tolerance(),
            batch: default_batch(),
            seed,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrialResult {
    pub architecture: Vec<LayerSpec>,
    pub loss: String,
    pub max_relative_error: f64,
    pub checked: usize,
    pub excluded: usize,
    pub unresolved: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GradientSuiteReport {
    pub max_relative_error: f64,
    pub trials: Vec<TrialResult>,
}

fn random_activation(rng: &mut SeedRng) -> Activation {
    match rng.random_range(0..4) {
        0 => Activation::Relu,
        1 => Activation::Tanh,
        2 => Activation::Identity,
        _ => Activation::Maxout {
            pool: rng.random_range(2..=3),
        },
    }
}

/// A small random architecture of at most three layers: up to two hidden
/// layers of mixed activations with optional batch norm, then a linear output.
pub fn random_architecture(rng: &mut SeedRng) -> Vec<LayerSpec> {
    let mut width = rng.random_range(2..=6);
    let mut spec = Vec::new();
    for _ in 0..rng.random_range(0..=2) {
        let activation = random_activation(rng);
        let units = rng.random_range(2..=6);
        let outputs = match activation {
            Activation::Maxout { pool } => units * pool,
            _ => units,
        };
        let mut layer = LayerSpec::new(width, outputs, activation);
        layer.batch_norm = rng.random_bool(0.3);
        width = layer.output_width();
        spec.push(layer);
    }
    spec.push(LayerSpec::new(width, rng.random_range(2..=5), Activation::Identity));
    spec
}

/// Runs `cfg.trials` gradient checks in double precision.
pub fn gradient_suite(cfg: &GradientSuiteConfig) -> Result<GradientSuiteReport> {
    if cfg.trials == 0 || cfg.batch < 2 {
        return Err(Error::Config("need at least one trial and a batch of two".into()));
    }
    let mut trials = Vec::with_capacity(cfg.trials);
    for t in 0..cfg.trials {
        let mut rng = SeedRng::seed_from_u64(derive_seed(cfg.seed, t as u64));
        let spec = random_architecture(&mut rng);
        let net: Network<f64> = Network::from_spec(&spec, &mut rng)?;
        let x = Array2::from_shape_fn((cfg.batch, net.input_dim()), |_| rng.random_range(-1.0..1.0));
        let c = net.output_dim();
        let (report, loss) = if t % 2 == 0 {
            let labels: Vec<usize> = (0..cfg.batch).map(|_| rng.random_range(0..c)).collect();
            let loss = CheckLoss::CrossEntropy { labels: &labels };
            (gradient_check(&net, &loss, x.view(), cfg.epsilon, cfg.per_tensor, cfg.seed)?, "cross_entropy".to_string())
        } else {
            let temperature = rng.random_range(1.0..5.0);
            let raw = Array2::from_shape_fn((cfg.batch, c), |_| rng.random_range(-3.0..3.0));
            let targets = softmax(raw.view())?;
            let loss = CheckLoss::SoftTarget {
                targets: targets.view(),
                temperature,
            };
            let r = gradient_check(&net, &loss, x.view(), cfg.epsilon, cfg.per_tensor, cfg.seed)?;
            (r, format!("soft_target(T={temperature:.3})"))
        };
        trials.push(TrialResult {
            architecture: spec,
            loss,
            max_relative_error: report.max_relative_error,
            checked: report.checked,
            excluded: report.excluded,
            unresolved: report.unresolved,
        });
    }
    let max_relative_error = trials.iter().map(|t| t.max_relative_error).fold(0.0, f64::max);
    Ok(GradientSuiteReport {
        max_relative_error,
        trials,
    })
}
