//! Fully connected generative adversarial network and the plain noise source
//! used by the pseudo-rehearsal baseline.

use std::fmt::Debug;
use std::path::{Path, PathBuf};

use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::nn::{
    binary_cross_entropy_with_logits, sigmoid, Activation, Adam, LayerSpec, Mode, Network, Optimizer,
};
use crate::sites::bundle::{self, TensorStore};
use crate::{Error, Result, SeedRng};

/// Anything that can emit samples in the data space.
pub trait SampleSource: Debug + Send + Sync {
    fn output_dim(&self) -> usize;
    fn generate(&self, count: usize, rng: &mut SeedRng) -> Result<Array2<f32>>;
}

/// Layer widths of the generator and the discriminator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GanArchitecture {
    pub noise_dim: usize,
    /// Relu hidden layers of the generator; a tanh layer of the data width follows.
    pub generator_hidden: Vec<usize>,
    /// Maxout hidden layers of the discriminator as `(units, pool)`; a single
    /// logit follows.
    pub discriminator_hidden: Vec<(usize, usize)>,
    /// Dropout on the discriminator's hidden layers.
    #[serde(default)]
    pub discriminator_dropout: Option<f32>,
}

impl GanArchitecture {
    /// Generator 1200-1200-d, discriminator two layers of 240 maxout-by-5 units.
    pub fn mnist() -> Self {
        Self::scaled(100, 1.0)
    }

    /// The MNIST architecture with every hidden width multiplied by `factor`.
    pub fn scaled(noise_dim: usize, factor: f64) -> Self {
        let w = |n: f64| ((n * factor).round() as usize).max(1);
        Self {
            noise_dim,
            generator_hidden: vec![w(1200.0), w(1200.0)],
            discriminator_hidden: vec![(w(240.0), 5), (w(240.0), 5)],
            discriminator_dropout: Some(0.5),
        }
    }

    pub fn generator_spec(&self, data_dim: usize) -> Vec<LayerSpec> {
        let mut spec = Vec::new();
        let mut width = self.noise_dim;
        for &h in &self.generator_hidden {
            spec.push(LayerSpec::new(width, h, Activation::Relu));
            width = h;
        }
        spec.push(LayerSpec::new(width, data_dim, Activation::Tanh));
        spec
    }

    pub fn discriminator_spec(&self, data_dim: usize) -> Vec<LayerSpec> {
        let mut spec = Vec::new();
        let mut width = data_dim;
        for &(units, pool) in &self.discriminator_hidden {
            let mut layer = LayerSpec::new(width, units * pool, Activation::Maxout { pool });
            layer.dropout = self.discriminator_dropout;
            spec.push(layer);
            width = units;
        }
        spec.push(LayerSpec::new(width, 1, Activation::Identity));
        spec
    }
}

/// Generator (noise -> sample, tanh output) and discriminator (sample -> logit).
#[derive(Clone, Debug, PartialEq)]
pub struct GanModel {
    pub generator: Network<f32>,
    pub discriminator: Network<f32>,
    epochs_trained: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GanCheckpointMetadata {
    pub gan_epoch: u32,
    pub noise_dim: usize,
    pub data_dim: usize,
    pub creation_seed: u64,
    pub generator: Vec<LayerSpec>,
    pub discriminator: Vec<LayerSpec>,
}

impl GanModel {
    pub fn new(arch: &GanArchitecture, data_dim: usize, seed: u64) -> Result<Self> {
        let mut rng = SeedRng::seed_from_u64(seed);
        let generator = Network::from_spec(&arch.generator_spec(data_dim), &mut rng)?;
        let discriminator = Network::from_spec(&arch.discriminator_spec(data_dim), &mut rng)?;
        Self::from_parts(generator, discriminator, 0)
    }

    pub fn from_parts(generator: Network<f32>, discriminator: Network<f32>, epochs_trained: u32) -> Result<Self> {
        let g_last = &generator.layers()[generator.layers().len() - 1];
        if g_last.activation != Activation::Tanh {
            return Err(Error::Shape("generator must end in a tanh layer".into()));
        }
        if discriminator.input_dim() != generator.output_dim() || discriminator.output_dim() != 1 {
            return Err(Error::Shape(format!(
                "discriminator maps {} -> {}, expected {} -> 1",
                discriminator.input_dim(),
                discriminator.output_dim(),
                generator.output_dim()
            )));
        }
        Ok(Self {
            generator,
            discriminator,
            epochs_trained,
        })
    }

    pub fn noise_dim(&self) -> usize {
        self.generator.input_dim()
    }

    pub fn data_dim(&self) -> usize {
        self.generator.output_dim()
    }

    pub fn epochs_trained(&self) -> u32 {
        self.epochs_trained
    }

    pub fn noise(&self, count: usize, rng: &mut SeedRng) -> Array2<f32> {
        Array2::from_shape_simple_fn((count, self.noise_dim()), || rng.sample(StandardNormal))
    }

    /// `count` generated samples; identical seeds give identical batches.
    pub fn sample(&self, count: usize, seed: u64) -> Result<Array2<f32>> {
        self.generate(count, &mut SeedRng::seed_from_u64(seed))
    }

    /// Discriminator probability that each row is real.
    pub fn discriminate(&self, x: ArrayView2<f32>) -> Result<Array1<f32>> {
        Ok(self.discriminator.forward(x)?.column(0).mapv(sigmoid))
    }

    pub fn checkpoint_metadata(&self, creation_seed: u64) -> GanCheckpointMetadata {
        GanCheckpointMetadata {
            gan_epoch: self.epochs_trained,
            noise_dim: self.noise_dim(),
            data_dim: self.data_dim(),
            creation_seed,
            generator: self.generator.spec(),
            discriminator: self.discriminator.spec(),
        }
    }

    pub(crate) fn push_tensors(&self, store: &mut TensorStore) -> Result<()> {
        store.push_network("generator", &self.generator)?;
        store.push_network("discriminator", &self.discriminator)
    }

    pub(crate) fn from_store(
        store: &TensorStore,
        generator: &[LayerSpec],
        discriminator: &[LayerSpec],
        epochs: u32,
    ) -> Result<Self> {
        Self::from_parts(
            store.network("generator", generator)?,
            store.network("discriminator", discriminator)?,
            epochs,
        )
    }

    /// Writes the model to `path` with its epoch count.
    pub fn save(&self, path: impl AsRef<Path>, creation_seed: u64) -> Result<String> {
        let mut store = TensorStore::new();
        self.push_tensors(&mut store)?;
        bundle::write(path, &self.checkpoint_metadata(creation_seed), &store)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<(Self, GanCheckpointMetadata)> {
        let (header, store, _) = bundle::read::<GanCheckpointMetadata>(path)?;
        let m = header.metadata;
        let gan = Self::from_store(&store, &m.generator, &m.discriminator, m.gan_epoch)?;
        Ok((gan, m))
    }

    /// Saves `gan-epoch-NNNN.pnc` under `dir` and returns its path.
    pub fn checkpoint_epoch(&self, dir: impl AsRef<Path>, creation_seed: u64) -> Result<PathBuf> {
        let path = checkpoint_path(dir, self.epochs_trained);
        self.save(&path, creation_seed)?;
        Ok(path)
    }
}

pub fn checkpoint_path(dir: impl AsRef<Path>, epoch: u32) -> PathBuf {
    dir.as_ref().join(format!("gan-epoch-{epoch:04}.pnc"))
}

impl SampleSource for GanModel {
    fn output_dim(&self) -> usize {
        self.data_dim()
    }

    fn generate(&self, count: usize, rng: &mut SeedRng) -> Result<Array2<f32>> {
        let z = self.noise(count, rng);
        self.generator.forward(z.view())
    }
}

/// i.i.d. standard normal samples clipped to `[-1, 1]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NoiseGenerator {
    pub dim: usize,
}

impl NoiseGenerator {
    pub fn new(dim: usize) -> Self {
        Self { dim }
    }
}

impl SampleSource for NoiseGenerator {
    fn output_dim(&self) -> usize {
        self.dim
    }

    fn generate(&self, count: usize, rng: &mut SeedRng) -> Result<Array2<f32>> {
        Ok(Array2::from_shape_simple_fn((count, self.dim), || {
            rng.sample::<f32, _>(StandardNormal).clamp(-1.0, 1.0)
        }))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GanConfig {
    pub batch_size: usize,
    pub learning_rate: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub seed: u64,
}

impl Default for GanConfig {
    fn default() -> Self {
        Self {
            batch_size: 16,
            learning_rate: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLosses {
    pub epoch: u32,
    pub d_loss: f32,
    pub g_loss: f32,
    /// Mean discriminator output on real and on generated batches.
    pub d_real: f32,
    pub d_fake: f32,
}

/// Optimiser state and random stream for adversarial training.
#[derive(Clone, Debug)]
pub struct GanTrainer {
    config: GanConfig,
    g_opt: Adam<f32>,
    d_opt: Adam<f32>,
    rng: SeedRng,
}

impl GanTrainer {
    pub fn new(gan: &GanModel, config: GanConfig) -> Result<Self> {
        if config.batch_size == 0 {
            return Err(Error::Parameter("GAN batch size must be positive".into()));
        }
        let g_opt = Adam::for_network(&gan.generator, config.learning_rate, config.beta1, config.beta2)?;
        let d_opt = Adam::for_network(&gan.discriminator, config.learning_rate, config.beta1, config.beta2)?;
        let rng = SeedRng::seed_from_u64(config.seed);
        Ok(Self {
            config,
            g_opt,
            d_opt,
            rng,
        })
    }

    pub fn config(&self) -> &GanConfig {
        &self.config
    }

    /// One discriminator update on `real` (target 1) and as many generated
    /// samples (target 0). Only discriminator parameters change.
    /// Returns `(loss, mean D(real), mean D(fake))`.
    pub fn discriminator_step(&mut self, gan: &mut GanModel, real: ArrayView2<f32>) -> Result<(f32, f32, f32)> {
        let b = real.nrows();
        let fake = gan.generate(b, &mut self.rng)?;
        let both = concatenate(Axis(0), &[real, fake.view()]).map_err(|e| Error::Shape(e.to_string()))?;
        let trace = gan.discriminator.forward_trace(both.view(), Mode::Train(Some(&mut self.rng)))?;
        let logits = trace.output();
        let (l_real, g_real) = binary_cross_entropy_with_logits(logits.slice(s![..b, ..]), 1.0)?;
        let (l_fake, g_fake) = binary_cross_entropy_with_logits(logits.slice(s![b.., ..]), 0.0)?;
        let upstream = concatenate(Axis(0), &[g_real.view(), g_fake.view()]).expect("same width");
        let grads = gan.discriminator.backward(&trace, upstream.view())?;
        self.d_opt.step_network(&mut gan.discriminator, &grads)?;
        let d_real = logits.slice(s![..b, 0]).mapv(sigmoid).mean().unwrap_or(0.0);
        let d_fake = logits.slice(s![b.., 0]).mapv(sigmoid).mean().unwrap_or(0.0);
        Ok((l_real + l_fake, d_real, d_fake))
    }

    /// One generator update maximising `log D(G(z))`. Only generator
    /// parameters change.
    pub fn generator_step(&mut self, gan: &mut GanModel, batch: usize) -> Result<f32> {
        let z = gan.noise(batch, &mut self.rng);
        let g_trace = gan.generator.forward_trace(z.view(), Mode::Train(None))?;
        let d_trace = gan
            .discriminator
            .forward_trace(g_trace.output().view(), Mode::Train(Some(&mut self.rng)))?;
        let (loss, upstream) = binary_cross_entropy_with_logits(d_trace.output().view(), 1.0)?;
        let (_, grad_fake) = gan.discriminator.backward_with_input(&d_trace, upstream.view())?;
        let grads = gan.generator.backward(&g_trace, grad_fake.view())?;
        self.g_opt.step_network(&mut gan.generator, &grads)?;
        Ok(loss)
    }

    /// One pass over `data` (rows in `[-1, 1]`): per minibatch a
    /// discriminator step then a generator step.
    pub fn train_epoch(&mut self, gan: &mut GanModel, data: ArrayView2<f32>) -> Result<EpochLosses> {
        if data.ncols() != gan.data_dim() {
            return Err(Error::Shape(format!(
                "data has {} features, GAN generates {}",
                data.ncols(),
                gan.data_dim()
            )));
        }
        if data.nrows() == 0 {
            return Err(Error::Data("cannot train a GAN on an empty dataset".into()));
        }
        if let Some(&v) = data
            .iter()
            .find(|v| !v.is_finite() || v.abs() > 1.0 + crate::data::RANGE_TOLERANCE)
        {
            return Err(Error::DataRange { value: v });
        }
        let mut order: Vec<usize> = (0..data.nrows()).collect();
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut self.rng);
        let (mut d_sum, mut g_sum, mut real_sum, mut fake_sum, mut batches) = (0.0, 0.0, 0.0, 0.0, 0usize);
        for chunk in order.chunks(self.config.batch_size) {
            let real = data.select(Axis(0), chunk);
            let (d, r, f) = self.discriminator_step(gan, real.view())?;
            let g = self.generator_step(gan, chunk.len())?;
            d_sum += d;
            g_sum += g;
            real_sum += r;
            fake_sum += f;
            batches += 1;
        }
        gan.epochs_trained += 1;
        let n = batches as f32;
        Ok(EpochLosses {
            epoch: gan.epochs_trained,
            d_loss: d_sum / n,
            g_loss: g_sum / n,
            d_real: real_sum / n,
            d_fake: fake_sum / n,
        })
    }
}

/// Trains a fresh GAN for `epochs`, invoking `on_epoch` after every epoch
/// (and once before the first, with epoch 0) so callers can checkpoint.
pub fn train_gan(
    arch: &GanArchitecture,
    data: ArrayView2<f32>,
    config: &GanConfig,
    epochs: u32,
    mut on_epoch: impl FnMut(&GanModel) -> Result<()>,
) -> Result<(GanModel, Vec<EpochLosses>)> {
    let mut gan = GanModel::new(arch, data.ncols(), crate::derive_seed(config.seed, 0x6a6e))?;
    let mut trainer = GanTrainer::new(&gan, config.clone())?;
    on_epoch(&gan)?;
    let mut log = Vec::with_capacity(epochs as usize);
    for _ in 0..epochs {
        log.push(trainer.train_epoch(&mut gan, data)?);
        on_epoch(&gan)?;
    }
    Ok((gan, log))
}
