//! Central finite-difference verification of the hand-written backward pass.

use ndarray::{Array2, ArrayView2};
use rand::seq::index;
use rand::SeedableRng;

use super::layer::Mode;
use super::loss::{cross_entropy, soft_target_loss, softmax, temperature_softmax, temperature_softmax_backward};
use super::{ForwardTrace, Gradients, Network, Scalar};
use crate::{Error, Result, SeedRng};

/// Scalar objective placed on top of a network output.
#[derive(Clone, Debug)]
pub enum CheckLoss<'a, F> {
    /// Softmax followed by categorical cross-entropy.
    CrossEntropy { labels: &'a [usize] },
    /// Temperature softmax followed by squared error against soft targets.
    SoftTarget { targets: ArrayView2<'a, F>, temperature: F },
    /// Squared error directly on the raw outputs.
    Mse { targets: ArrayView2<'a, F> },
}

impl<F: Scalar> CheckLoss<'_, F> {
    /// Loss value and `dLoss/dOutput` for a network output.
    pub fn evaluate(&self, output: ArrayView2<F>) -> Result<(F, Array2<F>)> {
        match self {
            CheckLoss::CrossEntropy { labels } => {
                let probs = softmax(output)?;
                let ce = cross_entropy(probs.view(), labels)?;
                Ok((ce.loss, ce.grad_logits))
            }
            CheckLoss::SoftTarget { targets, temperature } => {
                let probs = temperature_softmax(output, *temperature)?;
                let l = soft_target_loss(probs.view(), targets.view())?;
                let g = temperature_softmax_backward(probs.view(), l.grad.view(), *temperature)?;
                Ok((l.mse, g))
            }
            CheckLoss::Mse { targets } => {
                let l = soft_target_loss(output, targets.view())?;
                Ok((l.mse, l.grad))
            }
        }
    }
}

/// Loss and analytic parameter gradients for one batch.
pub fn loss_and_gradients<F: Scalar>(
    net: &Network<F>,
    loss: &CheckLoss<'_, F>,
    x: ArrayView2<F>,
) -> Result<(F, Gradients<F>)> {
    let trace = net.forward_trace(x, Mode::Train(None))?;
    let (value, upstream) = loss.evaluate(trace.output().view())?;
    Ok((value, net.backward(&trace, upstream.view())?))
}

fn pattern<F: Scalar>(net: &Network<F>, trace: &ForwardTrace<F>) -> Vec<u32> {
    net.layers()
        .iter()
        .zip(trace.layers())
        .flat_map(|(l, t)| l.activation.pattern(t.pre.view(), &t.activated))
        .collect()
}

fn loss_at<F: Scalar>(net: &Network<F>, loss: &CheckLoss<'_, F>, x: ArrayView2<F>) -> Result<(f64, Vec<u32>)> {
    let trace = net.forward_trace(x, Mode::Train(None))?;
    let (value, _) = loss.evaluate(trace.output().view())?;
    Ok((value.to_f64_lossy(), pattern(net, &trace)))
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub checked: usize,
    /// Parameters skipped because a perturbation crossed a relu or maxout kink.
    pub excluded: usize,
    /// Parameters whose analytic and numeric gradients are both below the
    /// rounding resolution of the difference quotient, such as a bias feeding
    /// batch normalisation.
    pub unresolved: usize,
}

/// Compares analytic gradients against central differences on up to
/// `per_tensor` randomly chosen entries of every parameter tensor.
///
/// A parameter is excluded when either perturbation changes a relu sign or a
/// maxout winner anywhere in the batch, i.e. when some pre-activation lies
/// within the perturbation of a non-differentiable point. A parameter is
/// counted as unresolved when both gradients are smaller than what rounding
/// the two loss values can produce on their own.
pub fn gradient_check<F: Scalar>(
    net: &Network<F>,
    loss: &CheckLoss<'_, F>,
    x: ArrayView2<F>,
    epsilon: f64,
    per_tensor: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    if !(1e-6..=1e-3).contains(&epsilon) {
        return Err(Error::Parameter(format!("epsilon {epsilon} outside [1e-6, 1e-3]")));
    }
    let (_, analytic) = loss_and_gradients(net, loss, x)?;
    let analytic: Vec<Vec<f64>> = analytic
        .tensors()
        .iter()
        .map(|t| t.iter().map(|v| v.to_f64_lossy()).collect())
        .collect();
    let (_, base_pattern) = loss_at(net, loss, x)?;

    let mut rng = SeedRng::seed_from_u64(seed);
    let mut work = net.clone();
    let eps = F::from_f64_lossy(epsilon);
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        checked: 0,
        excluded: 0,
        unresolved: 0,
    };
    let unit = F::epsilon().to_f64_lossy();
    for (t, grads) in analytic.iter().enumerate() {
        let picks = index::sample(&mut rng, grads.len(), per_tensor.min(grads.len()));
        for i in picks.iter() {
            let original = work.params_mut()[t][i];
            work.params_mut()[t][i] = original + eps;
            let (plus, plus_pattern) = loss_at(&work, loss, x)?;
            work.params_mut()[t][i] = original - eps;
            let (minus, minus_pattern) = loss_at(&work, loss, x)?;
            work.params_mut()[t][i] = original;

            if plus_pattern != base_pattern || minus_pattern != base_pattern {
                report.excluded += 1;
                continue;
            }
            // the step actually taken after rounding to F
            let h = ((original + eps).to_f64_lossy() - (original - eps).to_f64_lossy()).max(f64::MIN_POSITIVE);
            let numeric = (plus - minus) / h;
            let a = grads[i];
            let resolution = 4.0 * unit * plus.abs().max(minus.abs()).max(1.0) / h;
            if a.abs() <= resolution && numeric.abs() <= resolution {
                report.unresolved += 1;
                continue;
            }
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            report.max_relative_error = report.max_relative_error.max(rel);
            report.checked += 1;
        }
    }
    Ok(report)
}
