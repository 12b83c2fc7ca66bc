use ndarray::{array, Array1, Array2, Axis};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};

use phantomnet::nn::*;
use phantomnet::{Error, SeedRng};

fn rng(seed: u64) -> SeedRng {
    SeedRng::seed_from_u64(seed)
}

fn uniform(rows: usize, cols: usize, rng: &mut SeedRng) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
}

#[test]
fn identity_layer_passes_input_through() {
    let layer = DenseLayer::new(Array2::<f64>::eye(3), Array1::zeros(3), Activation::Identity).unwrap();
    let net = Network::new(vec![layer]).unwrap();
    let x = array![[0.5, -1.0, 2.0], [3.0, 0.0, -0.25]];
    assert_eq!(net.forward(x.view()).unwrap(), x);
}

#[test]
fn zero_head_gives_bias_logits() {
    let mut r = rng(1);
    let trunk = DenseLayer::init(&LayerSpec::new(4, 5, Activation::Relu), &mut r).unwrap();
    let head = DenseLayer::new(Array2::<f64>::zeros((5, 3)), array![0.7, 0.7, 0.7], Activation::Identity).unwrap();
    let clf = Classifier::new(Network::new(vec![trunk, head]).unwrap()).unwrap();
    let x = uniform(6, 4, &mut r);
    let logits = clf.logits(x.view()).unwrap();
    assert!(logits.iter().all(|&v| v == 0.7));
    let p = softmax(logits.view()).unwrap();
    assert!(p.iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));
}

// Straight-line recomputation of each layer with explicit loops.
fn reference_forward(net: &Network<f64>, x: &Array2<f64>) -> Array2<f64> {
    let mut h = x.clone();
    for layer in net.layers() {
        let (n, i, o) = (h.nrows(), layer.weights.nrows(), layer.weights.ncols());
        let mut pre = Array2::zeros((n, o));
        for r in 0..n {
            for c in 0..o {
                let mut s = layer.bias[c];
                for k in 0..i {
                    s += h[[r, k]] * layer.weights[[k, c]];
                }
                pre[[r, c]] = s;
            }
        }
        h = match layer.activation {
            Activation::Identity => pre,
            Activation::Relu => pre.mapv(|v| v.max(0.0)),
            Activation::Tanh => pre.mapv(f64::tanh),
            Activation::Maxout { pool } => Array2::from_shape_fn((n, o / pool), |(r, u)| {
                (0..pool).map(|q| pre[[r, u * pool + q]]).fold(f64::NEG_INFINITY, f64::max)
            }),
        };
    }
    h
}

#[test]
fn forward_matches_reference_recomputation() {
    let mut r = rng(2);
    let net: Network<f64> = Network::mlp(
        7,
        &[(6, Activation::Relu), (8, Activation::Maxout { pool: 2 }), (5, Activation::Tanh)],
        (3, Activation::Identity),
        &mut r,
    )
    .unwrap();
    let x = uniform(9, 7, &mut r);
    let got = net.forward(x.view()).unwrap();
    let want = reference_forward(&net, &x);
    for (a, b) in got.iter().zip(want.iter()) {
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }
}

#[test]
fn forward_rejects_wrong_width() {
    let net: Network<f32> = Network::mlp(4, &[], (2, Activation::Identity), &mut rng(3)).unwrap();
    let x = Array2::<f32>::zeros((2, 5));
    assert!(matches!(net.forward(x.view()), Err(Error::Shape(_))));
}

#[test]
fn zero_upstream_gives_zero_gradients() {
    let mut r = rng(4);
    let net: Network<f64> =
        Network::mlp(5, &[(4, Activation::Tanh), (6, Activation::Maxout { pool: 3 })], (3, Activation::Identity), &mut r)
            .unwrap();
    let x = uniform(4, 5, &mut r);
    let trace = net.forward_trace(x.view(), Mode::Train(None)).unwrap();
    let grads = net.backward(&trace, Array2::zeros((4, 3)).view()).unwrap();
    assert!(grads.tensors().iter().all(|t| t.iter().all(|&v| v == 0.0)));
}

#[test]
fn backward_with_foreign_trace_is_a_state_error() {
    let mut r = rng(5);
    let a: Network<f64> = Network::mlp(5, &[(4, Activation::Tanh)], (3, Activation::Identity), &mut r).unwrap();
    let b: Network<f64> = Network::mlp(5, &[(7, Activation::Tanh)], (3, Activation::Identity), &mut r).unwrap();
    let x = uniform(2, 5, &mut r);
    let trace = b.forward_trace(x.view(), Mode::Train(None)).unwrap();
    assert!(matches!(a.backward(&trace, Array2::zeros((2, 3)).view()), Err(Error::State(_))));
    let trace = a.forward_trace(x.view(), Mode::Train(None)).unwrap();
    assert!(matches!(a.backward(&trace, Array2::zeros((3, 3)).view()), Err(Error::State(_))));
}

#[test]
fn linear_model_with_mse_is_exact() {
    let mut r = rng(6);
    let net: Network<f64> = Network::mlp(4, &[], (3, Activation::Identity), &mut r).unwrap();
    let x = uniform(5, 4, &mut r);
    let targets = uniform(5, 3, &mut r);
    let loss = CheckLoss::Mse { targets: targets.view() };
    let report = gradient_check(&net, &loss, x.view(), 1e-5, 100, 0).unwrap();
    assert_eq!(report.excluded, 0);
    assert!(report.max_relative_error < 1e-7, "{report:?}");
}

#[test]
fn three_layer_tanh_with_cross_entropy() {
    let mut r = rng(7);
    let net: Network<f64> =
        Network::mlp(6, &[(5, Activation::Tanh), (4, Activation::Tanh)], (3, Activation::Identity), &mut r).unwrap();
    let x = uniform(8, 6, &mut r);
    let labels = [0, 1, 2, 0, 1, 2, 2, 1];
    let loss = CheckLoss::CrossEntropy { labels: &labels };
    let report = gradient_check(&net, &loss, x.view(), 1e-5, 1000, 1).unwrap();
    assert_eq!(report.checked, net.param_count());
    assert!(report.max_relative_error < 1e-4, "{report:?}");
}

#[test]
fn relu_kink_parameters_are_excluded() {
    // bias 0 and an input column of zeros put one pre-activation exactly on the kink
    let w = array![[1.0, -1.0], [0.5, 2.0]];
    let layer = DenseLayer::new(w, array![0.0, 0.3], Activation::Relu).unwrap();
    let head = DenseLayer::new(array![[1.0, -1.0], [0.5, 0.25]], array![0.0, 0.0], Activation::Identity).unwrap();
    let net = Network::new(vec![layer, head]).unwrap();
    let x = array![[0.0, 0.0], [0.0, 0.0]];
    let labels = [0, 1];
    let loss = CheckLoss::CrossEntropy { labels: &labels };
    let report = gradient_check(&net, &loss, x.view(), 1e-4, 100, 2).unwrap();
    assert!(report.excluded > 0);
    assert!(report.max_relative_error < 1e-4, "{report:?}");
}

#[test]
fn bias_feeding_batch_norm_is_unresolved_not_failed() {
    let mut r = rng(14);
    let mut spec = LayerSpec::new(5, 5, Activation::Tanh);
    spec.batch_norm = true;
    let net = Network::from_spec(&[spec, LayerSpec::new(5, 4, Activation::Identity)], &mut r).unwrap();
    let x = uniform(4, 5, &mut r);
    let labels = [0, 1, 2, 3];
    let loss = CheckLoss::CrossEntropy { labels: &labels };
    let (_, grads) = loss_and_gradients(&net, &loss, x.view()).unwrap();
    let bias = &grads.tensors()[1];
    assert!(bias.iter().all(|g| g.abs() < 1e-12), "{bias:?}");
    let report = gradient_check(&net, &loss, x.view(), 1e-5, 100, 1).unwrap();
    assert!(report.unresolved >= 5, "{report:?}");
    assert!(report.max_relative_error < 1e-4, "{report:?}");
}

#[test]
fn epsilon_outside_range_is_rejected() {
    let net: Network<f64> = Network::mlp(2, &[], (2, Activation::Identity), &mut rng(8)).unwrap();
    let x = Array2::zeros((2, 2));
    let labels = [0, 1];
    let loss = CheckLoss::CrossEntropy { labels: &labels };
    assert!(gradient_check(&net, &loss, x.view(), 1e-2, 1, 0).is_err());
    assert!(gradient_check(&net, &loss, x.view(), 1e-7, 1, 0).is_err());
}

#[test]
fn every_layer_of_mixed_net_passes_with_both_losses() {
    let mut r = rng(9);
    let mut spec = vec![
        LayerSpec::new(6, 8, Activation::Maxout { pool: 2 }),
        LayerSpec::new(4, 5, Activation::Relu),
        LayerSpec::new(5, 3, Activation::Identity),
    ];
    spec[1].batch_norm = true;
    let net: Network<f64> = Network::from_spec(&spec, &mut r).unwrap();
    let x = uniform(6, 6, &mut r);
    let labels = [2, 1, 0, 0, 1, 2];
    let soft = softmax(uniform(6, 3, &mut r).view()).unwrap();
    for loss in [
        CheckLoss::CrossEntropy { labels: &labels },
        CheckLoss::SoftTarget {
            targets: soft.view(),
            temperature: 3.0,
        },
    ] {
        let report = gradient_check(&net, &loss, x.view(), 1e-5, 1000, 3).unwrap();
        assert!(report.checked > 0);
        assert!(report.max_relative_error < 1e-4, "{report:?}");
    }
}

#[test]
fn forward_and_backward_are_bit_deterministic() {
    let mut r = rng(10);
    let net: Network<f32> = Network::mlp(5, &[(6, Activation::Relu)], (3, Activation::Identity), &mut r).unwrap();
    let x = Array2::from_shape_fn((4, 5), |_| r.random_range(-1.0f32..1.0));
    let run = || {
        let t = net.forward_trace(x.view(), Mode::Train(None)).unwrap();
        let up = t.output().mapv(|v| v * 0.5);
        (t.output().clone(), net.backward(&t, up.view()).unwrap())
    };
    assert_eq!(run(), run());
}

#[test]
fn networks_from_one_seed_are_identical() {
    let spec = [LayerSpec::new(3, 4, Activation::Tanh), LayerSpec::new(4, 2, Activation::Identity)];
    let a: Network<f32> = Network::from_spec(&spec, &mut rng(11)).unwrap();
    let b: Network<f32> = Network::from_spec(&spec, &mut rng(11)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn sgd_step_through_network() {
    let layer = DenseLayer::new(array![[1.0f64]], array![0.0], Activation::Identity).unwrap();
    let mut net = Network::new(vec![layer]).unwrap();
    let mut opt = OptimizerState::for_network(&net, 0.1, 0.9).unwrap();
    let x = array![[1.0]];
    for _ in 0..2 {
        let t = net.forward_trace(x.view(), Mode::Train(None)).unwrap();
        let g = net.backward(&t, array![[1.0]].view()).unwrap();
        opt.step_network(&mut net, &g).unwrap();
    }
    // w: 1 - 0.1 - 0.19, bias: 0 - 0.1 - 0.19
    assert!((net.layers()[0].weights[[0, 0]] - 0.71).abs() < 1e-12);
    assert!((net.layers()[0].bias[0] + 0.29).abs() < 1e-12);
}

fn entropy(p: ndarray::ArrayView1<f64>) -> f64 {
    -p.iter().filter(|&&v| v > 0.0).map(|&v| v * v.ln()).sum::<f64>()
}

fn logits_strategy() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-30.0f64..30.0, 2..12)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn temperature_softmax_is_a_distribution(z in logits_strategy(), t in 1.0f64..50.0) {
        let n = z.len();
        let z = Array2::from_shape_vec((1, n), z).unwrap();
        let p = temperature_softmax(z.view(), t).unwrap();
        prop_assert!(p.iter().all(|&v| v >= 0.0));
        prop_assert!((p.sum() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn unit_temperature_equals_softmax(z in logits_strategy()) {
        let n = z.len();
        let z = Array2::from_shape_vec((1, n), z).unwrap();
        let a = temperature_softmax(z.view(), 1.0).unwrap();
        let b = softmax(z.view()).unwrap();
        for (x, y) in a.iter().zip(b.iter()) {
            prop_assert!((x - y).abs() < 1e-7);
        }
    }

    #[test]
    fn temperature_preserves_argmax(z in logits_strategy(), t in 1.0f64..50.0) {
        let n = z.len();
        let z = Array2::from_shape_vec((1, n), z).unwrap();
        let a = temperature_softmax(z.view(), t).unwrap();
        prop_assert_eq!(argmax(a.iter().copied()), argmax(z.iter().copied()));
    }

    #[test]
    fn entropy_and_peak_are_monotone_in_temperature(z in logits_strategy(), t1 in 1.0f64..20.0, dt in 0.0f64..20.0) {
        let n = z.len();
        let z = Array2::from_shape_vec((1, n), z).unwrap();
        let lo = temperature_softmax(z.view(), t1).unwrap();
        let hi = temperature_softmax(z.view(), t1 + dt).unwrap();
        prop_assert!(entropy(hi.row(0)) >= entropy(lo.row(0)) - 1e-12);
        let peak = |p: &Array2<f64>| p.iter().copied().fold(0.0, f64::max);
        prop_assert!(peak(&hi) <= peak(&lo) + 1e-12);
    }

    #[test]
    fn random_small_nets_pass_gradient_check(seed in any::<u64>()) {
        let mut r = rng(seed);
        let mut spec = Vec::new();
        let mut width = r.random_range(2..=5);
        for _ in 0..r.random_range(0..=2) {
            let act = match r.random_range(0..3) {
                0 => Activation::Relu,
                1 => Activation::Tanh,
                _ => Activation::Maxout { pool: 2 },
            };
            let units = r.random_range(2..=5);
            let s = LayerSpec::new(width, if matches!(act, Activation::Maxout { .. }) { units * 2 } else { units }, act);
            width = s.output_width();
            spec.push(s);
        }
        let c = r.random_range(2..=4);
        spec.push(LayerSpec::new(width, c, Activation::Identity));
        let net: Network<f64> = Network::from_spec(&spec, &mut r).unwrap();
        let x = uniform(3, net.input_dim(), &mut r);
        let labels: Vec<usize> = (0..3).map(|_| r.random_range(0..c)).collect();
        let soft = softmax(uniform(3, c, &mut r).view()).unwrap();
        let ce = CheckLoss::CrossEntropy { labels: &labels };
        let st = CheckLoss::SoftTarget { targets: soft.view(), temperature: 2.0 };
        for loss in [ce, st] {
            let report = gradient_check(&net, &loss, x.view(), 1e-5, 8, seed).unwrap();
            prop_assert!(report.max_relative_error < 1e-4, "{:?} {:?}", spec, report);
        }
    }

    #[test]
    fn softmax_rows_sum_to_one(rows in prop::collection::vec(logits_strategy().prop_filter("width", |v| v.len() == 4), 1..6)) {
        let b = rows.len();
        let z = Array2::from_shape_vec((b, 4), rows.concat()).unwrap();
        let p = softmax(z.view()).unwrap();
        for s in p.sum_axis(Axis(1)) {
            prop_assert!((s - 1.0).abs() < 1e-6);
        }
    }
}
