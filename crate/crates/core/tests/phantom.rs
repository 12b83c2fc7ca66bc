use std::sync::Arc;

use ndarray::{array, Array1, Array2, ArrayView2, Axis};
use proptest::prelude::*;
use rand::SeedableRng;

use phantomnet::gan::{GanArchitecture, GanModel, NoiseGenerator, SampleSource};
use phantomnet::nn::{temperature_softmax, Activation, Classifier, DenseLayer, Network};
use phantomnet::phantom::{expand_targets, PhantomSampler};
use phantomnet::{Error, Result, SeedRng};

/// Emits the same row every time.
#[derive(Debug)]
struct Constant(Array1<f32>);

impl SampleSource for Constant {
    fn output_dim(&self) -> usize {
        self.0.len()
    }

    fn generate(&self, count: usize, _rng: &mut SeedRng) -> Result<Array2<f32>> {
        Ok(self.0.broadcast((count, self.0.len())).unwrap().to_owned())
    }
}

fn labeler(d: usize, j: usize, seed: u64) -> Classifier<f32> {
    let mut rng = SeedRng::seed_from_u64(seed);
    Classifier::mlp(d, &[(8, Activation::Tanh)], j, &mut rng).unwrap()
}

fn gan(d: usize) -> Arc<GanModel> {
    let arch = GanArchitecture {
        noise_dim: 3,
        generator_hidden: vec![8],
        discriminator_hidden: vec![(4, 2)],
        discriminator_dropout: None,
    };
    Arc::new(GanModel::new(&arch, d, 5).unwrap())
}

fn assert_padded_distribution(t: ArrayView2<f32>, j: usize) {
    for row in t.axis_iter(Axis(0)) {
        let s: f32 = row.iter().take(j).sum();
        assert!((s - 1.0).abs() < 1e-6, "row sums to {s}");
        assert!(row.iter().skip(j).all(|&v| v == 0.0));
    }
}

#[test]
fn expand_targets_pads_with_zeros() {
    let soft = array![[0.7f32, 0.3]];
    assert_eq!(expand_targets(soft.view(), 4).unwrap(), array![[0.7, 0.3, 0.0, 0.0]]);
    assert_eq!(expand_targets(soft.view(), 2).unwrap(), soft);
    assert!(matches!(expand_targets(soft.view(), 1), Err(Error::Parameter(_))));
}

#[test]
fn fixed_generator_composes_labeler_and_padding() {
    let x0 = array![0.2f32, -0.4, 0.9];
    let net = labeler(3, 2, 1);
    let sampler = PhantomSampler::new(Arc::new(Constant(x0.clone())), net.clone(), 2.5, 5).unwrap();
    let batch = sampler.sample(4, 7).unwrap();
    for row in batch.samples.axis_iter(Axis(0)) {
        assert_eq!(row, x0);
    }
    let logits = net.logits(x0.view().insert_axis(Axis(0))).unwrap();
    let soft = temperature_softmax(logits.view(), 2.5).unwrap();
    let want = expand_targets(soft.view(), 5).unwrap();
    for row in batch.soft_targets.axis_iter(Axis(0)) {
        assert_eq!(row, want.row(0));
    }
}

#[test]
fn equal_class_counts_need_no_padding() {
    let net = labeler(3, 4, 2);
    let source = gan(3);
    let sampler = PhantomSampler::new(source, net.clone(), 3.0, 4).unwrap();
    let batch = sampler.sample(6, 1).unwrap();
    let logits = net.logits(batch.samples.view()).unwrap();
    assert_eq!(batch.soft_targets, temperature_softmax(logits.view(), 3.0).unwrap());
}

#[test]
fn confident_labeler_at_unit_temperature_gives_near_one_hot() {
    let head = DenseLayer::new(array![[40.0f32, -40.0], [0.0, 0.0]], array![0.0, 0.0], Activation::Identity).unwrap();
    let net = Classifier::new(Network::new(vec![head]).unwrap()).unwrap();
    let sampler = PhantomSampler::new(Arc::new(Constant(array![0.5, 0.0])), net, 1.0, 3).unwrap();
    let t = sampler.sample(2, 0).unwrap().soft_targets;
    for row in t.axis_iter(Axis(0)) {
        assert!(row[0] > 1.0 - 1e-6);
        assert!(row[1] < 1e-6);
        assert_eq!(row[2], 0.0);
    }
}

#[test]
fn construction_errors() {
    let net = labeler(3, 2, 3);
    let wrong = gan(4);
    assert!(matches!(
        PhantomSampler::new(wrong, net.clone(), 2.0, 4),
        Err(Error::Shape(_))
    ));
    assert!(matches!(
        PhantomSampler::new(gan(3), net.clone(), 0.5, 4),
        Err(Error::Parameter(_))
    ));
    assert!(matches!(
        PhantomSampler::new(gan(3), net.clone(), 2.0, 1),
        Err(Error::Parameter(_))
    ));
    assert!(matches!(PhantomSampler::mixture(vec![], net, 2.0, 4), Err(Error::Config(_))));
}

#[test]
fn sampling_never_mutates_models() {
    let net = labeler(3, 2, 4);
    let source = gan(3);
    let (net_before, gan_before) = (net.clone(), (*source).clone());
    let sampler = PhantomSampler::new(source.clone(), net, 2.0, 5).unwrap();
    let mut rng = SeedRng::seed_from_u64(0);
    for _ in 0..1000 {
        sampler.sample_with(4, &mut rng).unwrap();
    }
    assert_eq!(sampler.labeler(), &net_before);
    assert_eq!(*source, gan_before);
}

#[test]
fn noise_source_uses_the_same_path() {
    let net = labeler(6, 3, 5);
    let sampler = PhantomSampler::new(Arc::new(NoiseGenerator::new(6)), net.clone(), 1.0, 7).unwrap();
    let batch = sampler.sample(32, 9).unwrap();
    assert!(batch.samples.iter().all(|v| (-1.0..=1.0).contains(v)));
    assert_eq!(batch.soft_targets, sampler.label(batch.samples.view()).unwrap());
    assert_padded_distribution(batch.soft_targets.view(), 3);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn batches_are_padded_distributions_and_reproducible(
        seed in any::<u64>(),
        t in 1.0f32..20.0,
        extra in 0usize..5,
        batch in 1usize..20,
    ) {
        let sampler = PhantomSampler::new(gan(3), labeler(3, 3, seed % 7), t, 3 + extra).unwrap();
        let a = sampler.sample(batch, seed).unwrap();
        prop_assert_eq!(a.samples.dim(), (batch, 3));
        prop_assert_eq!(a.soft_targets.dim(), (batch, 3 + extra));
        assert_padded_distribution(a.soft_targets.view(), 3);
        prop_assert_eq!(a, sampler.sample(batch, seed).unwrap());
    }

    #[test]
    fn expansion_preserves_rows(rows in prop::collection::vec(prop::collection::vec(0.0f32..1.0, 3), 1..8), extra in 0usize..4) {
        let b = rows.len();
        let soft = Array2::from_shape_vec((b, 3), rows.concat()).unwrap();
        let out = expand_targets(soft.view(), 3 + extra).unwrap();
        for (r, o) in soft.axis_iter(Axis(0)).zip(out.axis_iter(Axis(0))) {
            prop_assert_eq!(r.sum(), o.sum());
            prop_assert!(o.iter().take(3).zip(r.iter()).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }
}
